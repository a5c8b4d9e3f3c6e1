use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrtdvp::record::fmt_f64;
use rayon::prelude::*;

mod compare;
mod config;
mod run;

use config::{Engine, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration (exit 2).
    Config(String),
    /// Unusable input records (exit 2).
    Input(String),
    /// Simulation aborted (exit 3).
    Runtime(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run aborted: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "lrtdvp", version, about = "Low-rank Lindblad dynamics driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration file (a sweep block runs every value).
    Run {
        config: PathBuf,
        #[arg(long, value_enum)]
        engine: Option<Engine>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Parallel sweep workers; each run is single threaded.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Compare two `.samples.csv` records column by column.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Pass/fail threshold on observable columns.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Linearly interpolate the second record onto the first one's times.
        #[arg(long)]
        interpolate: bool,
        #[arg(long)]
        quiet: bool,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

struct Finished {
    value: Option<f64>,
    stem: String,
    outcome: Result<run::RunResult, CliError>,
}

fn run_one(cfg: &RunConfig, stem_name: &str, value: Option<f64>) -> Finished {
    let outcome = run::build(cfg).and_then(|b| run::execute(cfg, &b)).and_then(|res| {
        run::write_outputs(&run::stem(&cfg.output.dir, stem_name), cfg, &res, value)?;
        Ok(res)
    });
    Finished {
        value,
        stem: stem_name.to_string(),
        outcome,
    }
}

fn summary_line(f: &Finished) -> String {
    match &f.outcome {
        Ok(r) => {
            let last = r.record.final_sample();
            format!(
                "{}: t = {} rank = {} entropy = {:.6}{}",
                f.stem,
                fmt_f64(r.t_reached),
                last.map(|s| s.rank).unwrap_or(0),
                last.map(|s| s.entropy).unwrap_or(f64::NAN),
                r.aborted.as_deref().map(|m| format!(" [aborted: {m}]")).unwrap_or_default()
            )
        }
        Err(e) => format!("{}: {e}", f.stem),
    }
}

fn write_sweep_summary(path: PathBuf, parameter: &str, results: &[Finished], names: &[String]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    write!(w, "{parameter},status,t_reached,final_rank,peak_rank,entropy").map_err(io)?;
    for n in names {
        write!(w, ",{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for f in results {
        let v = fmt_f64(f.value.unwrap_or(f64::NAN));
        match &f.outcome {
            Ok(r) => {
                let last = r.record.final_sample();
                let status = if r.aborted.is_some() { "aborted" } else { "ok" };
                write!(
                    w,
                    "{v},{status},{},{},{},{}",
                    fmt_f64(r.t_reached),
                    last.map(|s| s.rank).unwrap_or(0),
                    r.record.diagnostics.peak_rank,
                    fmt_f64(last.map(|s| s.entropy).unwrap_or(f64::NAN))
                )
                .map_err(io)?;
                for n in names {
                    match r.record.final_value(n) {
                        Some(x) => write!(w, ",{}", fmt_f64(x)).map_err(io)?,
                        None => write!(w, ",").map_err(io)?,
                    }
                }
            }
            Err(_) => write!(w, "{v},failed,,,,{}", ",".repeat(names.len())).map_err(io)?,
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn cmd_run(
    path: PathBuf,
    engine: Option<Engine>,
    output_dir: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg = load(&path)?;
    if let Some(e) = engine {
        cfg.engine = e;
    }
    if let Some(d) = output_dir {
        cfg.output.dir = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&cfg.output.dir).map_err(|e| CliError::Io(format!("{}: {e}", cfg.output.dir.display())))?;

    let Some(sweep) = cfg.sweep.clone() else {
        let f = run_one(&cfg, &cfg.output.name, None);
        if !quiet {
            println!("{}", summary_line(&f));
        }
        let res = f.outcome?;
        return match res.aborted {
            Some(m) => Err(CliError::Runtime(m)),
            None => Ok(()),
        };
    };

    // every point is validated before anything runs
    let points = sweep
        .values
        .iter()
        .map(|&v| cfg.with_parameter(&sweep.parameter, v))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let results: Vec<Finished> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(k, c)| run_one(c, &format!("{}_{k:03}", cfg.output.name), Some(sweep.values[k])))
            .collect()
    });
    let names = run::build(&points[0]).map(|b| b.observables.iter().map(|o| o.name().to_string()).collect::<Vec<_>>());
    let names = names.unwrap_or_default();
    write_sweep_summary(cfg.output.dir.join(format!("{}.summary.csv", cfg.output.name)), &sweep.parameter, &results, &names)?;
    if !quiet {
        for f in &results {
            println!("{}", summary_line(f));
        }
    }
    let failures = results
        .iter()
        .filter(|f| f.outcome.as_ref().map(|r| r.aborted.is_some()).unwrap_or(true))
        .count();
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} of {} sweep points failed", results.len())));
    }
    Ok(())
}

fn cmd_compare(a: PathBuf, b: PathBuf, tol: f64, interpolate: bool, quiet: bool) -> Result<bool, CliError> {
    let (ta, tb) = (compare::read_table(&a)?, compare::read_table(&b)?);
    let mut s = compare::compare(&ta, &tb, interpolate, tol)?;
    let state_of = |p: &PathBuf| -> Option<PathBuf> {
        let name = p.file_name()?.to_str()?.strip_suffix(".samples.csv")?;
        let q = p.with_file_name(format!("{name}.state.csv"));
        q.exists().then_some(q)
    };
    if let (Some(sa), Some(sb)) = (state_of(&a), state_of(&b)) {
        s.overlap = Some(compare::state_overlap(&sa, &sb)?);
    }
    if !quiet {
        print!("{}", s.render());
    }
    Ok(s.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            engine,
            output_dir,
            workers,
            seed,
            quiet,
        } => cmd_run(config, engine, output_dir, workers, seed, quiet).map(|_| true),
        Command::Compare {
            a,
            b,
            tol,
            interpolate,
            quiet,
        } => cmd_compare(a, b, tol, interpolate, quiet),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("lrtdvp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
