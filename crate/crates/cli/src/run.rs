//! Model assembly, engine dispatch and output files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lrtdvp::lindblad::LindbladModel;
use lrtdvp::models::{cat, faf, xyz};
use lrtdvp::numerics::CMat;
use lrtdvp::observables::Observable;
use lrtdvp::oracle::integrate_dense;
use lrtdvp::record::{fmt_f64, RunRecord};
use lrtdvp::state::LowRankState;
use lrtdvp::tdvp::Evolution;
use lrtdvp::truncation::run_baseline;
use serde::Serialize;

use crate::config::{Engine, ModelConfig, RunConfig};
use crate::CliError;

pub struct Built {
    pub model: LindbladModel,
    pub state: LowRankState,
    pub observables: Vec<Box<dyn Observable>>,
}

pub fn build(cfg: &RunConfig) -> Result<Built, CliError> {
    let invalid = |e: lrtdvp::Error| CliError::Config(e.to_string());
    let ((model, state), all) = match &cfg.model {
        ModelConfig::Xyz(p) => {
            let built = xyz::build_xyz(p).map_err(invalid)?;
            (built, xyz::xyz_observables(&p.lattice().map_err(invalid)?).map_err(invalid)?)
        }
        ModelConfig::Faf(p) => (faf::build_faf(p).map_err(invalid)?, faf::faf_observables(p).map_err(invalid)?),
        ModelConfig::Cat(p) => (cat::build_cat_gate(p).map_err(invalid)?, cat::gate_error_observables(p).map_err(invalid)?),
    };
    let observables = if cfg.observables.is_empty() {
        all
    } else {
        let known: Vec<String> = all.iter().map(|o| o.name().to_string()).collect();
        if let Some(bad) = cfg.observables.iter().find(|n| !known.contains(n)) {
            return Err(CliError::Config(format!("unknown observable {bad:?}; available: {}", known.join(", "))));
        }
        all.into_iter().filter(|o| cfg.observables.iter().any(|n| n == o.name())).collect()
    };
    Ok(Built { model, state, observables })
}

pub struct RunResult {
    pub record: RunRecord,
    pub final_state: Option<CMat>,
    pub t_reached: f64,
    pub aborted: Option<String>,
    pub wall_clock: f64,
}

pub fn execute(cfg: &RunConfig, built: &Built) -> Result<RunResult, CliError> {
    let solver = cfg.resolved_solver();
    let start = Instant::now();
    let runtime = |e: lrtdvp::Error| CliError::Runtime(e.to_string());
    let dense = |s: &LowRankState| if cfg.output.dump_state { s.reconstruct_dense().ok() } else { None };
    let (record, final_state, t_reached, aborted) = match cfg.engine {
        Engine::Lrtdvp => {
            let mut ev = Evolution::new(&built.model, solver).with_observables(&built.observables).with_seed(cfg.seed);
            if let Some(p) = cfg.rank {
                ev = ev.with_policy(p);
            }
            let out = ev.run(built.state.clone());
            (out.record, dense(&out.state), out.t_reached, out.error.map(|e| e.to_string()))
        }
        Engine::Oracle => {
            let rho0 = built.state.reconstruct_dense().map_err(runtime)?;
            let run = integrate_dense(&rho0, &built.model, &solver, &built.observables, false).map_err(runtime)?;
            let keep = cfg.output.dump_state.then_some(run.final_state);
            (run.record, keep, solver.t1, None)
        }
        Engine::Baseline => {
            let out = run_baseline(&built.state, &built.model, &solver, &cfg.baseline, &built.observables).map_err(runtime)?;
            let keep = if cfg.output.dump_state { Some(out.state.to_dense()) } else { None };
            (out.record, keep, out.t_reached, out.error.map(|e| e.to_string()))
        }
    };
    Ok(RunResult {
        record,
        final_state,
        t_reached,
        aborted,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct Metadata<'a> {
    program: &'static str,
    version: &'static str,
    engine: &'static str,
    /// Fully resolved configuration in the input format.
    config: String,
    sweep_value: Option<f64>,
    wall_clock_seconds: f64,
    t_reached: f64,
    peak_rank: usize,
    final_rank: Option<usize>,
    /// Peak resident set size in kB (Linux only).
    peak_rss_kb: Option<u64>,
    aborted: Option<&'a str>,
    diagnostics: &'a lrtdvp::record::Diagnostics,
}

pub fn peak_rss_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

pub fn stem(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn create(path: PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn samples_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".samples.csv")
}

pub fn state_path(stem: &Path) -> PathBuf {
    with_ext(stem, ".state.csv")
}

pub fn write_outputs(stem: &Path, cfg: &RunConfig, res: &RunResult, sweep_value: Option<f64>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", stem.display()));
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = create(samples_path(stem))?;
    res.record.write_samples_csv(&mut w).and_then(|_| w.flush()).map_err(io)?;
    let mut w = create(with_ext(stem, ".events.csv"))?;
    res.record.write_events_csv(&mut w).and_then(|_| w.flush()).map_err(io)?;
    if cfg.output.steps {
        let mut w = create(with_ext(stem, ".steps.csv"))?;
        res.record.write_steps_csv(&mut w).and_then(|_| w.flush()).map_err(io)?;
    }
    if let Some(rho) = &res.final_state {
        let mut w = create(state_path(stem))?;
        write_state(&mut w, rho).and_then(|_| w.flush()).map_err(io)?;
    }
    let meta = Metadata {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        engine: cfg.engine.as_str(),
        config: cfg.to_toml(),
        sweep_value,
        wall_clock_seconds: res.wall_clock,
        t_reached: res.t_reached,
        peak_rank: res.record.diagnostics.peak_rank.max(res.record.samples.iter().map(|s| s.rank).max().unwrap_or(0)),
        final_rank: res.record.final_sample().map(|s| s.rank),
        peak_rss_kb: peak_rss_kb(),
        aborted: res.aborted.as_deref(),
        diagnostics: &res.record.diagnostics,
    };
    let mut w = create(with_ext(stem, ".json"))?;
    serde_json::to_writer_pretty(&mut w, &meta).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io)?;
    Ok(())
}

fn write_state<W: Write>(mut w: W, rho: &CMat) -> std::io::Result<()> {
    writeln!(w, "i,j,re,im")?;
    for ((i, j), v) in rho.indexed_iter() {
        writeln!(w, "{i},{j},{},{}", fmt_f64(v.re), fmt_f64(v.im))?;
    }
    Ok(())
}
