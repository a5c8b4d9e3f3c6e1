//! Run configuration file.

use std::path::PathBuf;

use lrtdvp::models::cat::CatParams;
use lrtdvp::models::faf::FafParams;
use lrtdvp::models::xyz::XyzParams;
use lrtdvp::rank::RankPolicy;
use lrtdvp::tdvp::SolverConfig;
use lrtdvp::truncation::BaselineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Lrtdvp,
    Oracle,
    Baseline,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Lrtdvp => "lrtdvp",
            Engine::Oracle => "oracle",
            Engine::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelConfig {
    Xyz(XyzParams),
    Faf(FafParams),
    Cat(CatParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File stem; sweeps append `_000`, `_001`, ...
    pub name: String,
    /// Number of uniform output intervals, used when `solver.output_times` is empty.
    pub samples: usize,
    /// Also write per-step diagnostics.
    pub steps: bool,
    /// Also write the final density matrix.
    pub dump_state: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            name: "run".into(),
            samples: 100,
            steps: false,
            dump_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted key, e.g. `model.jy` or `rank.eps_max`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub seed: u64,
    /// Subset of the model's observables to record; empty keeps all.
    #[serde(default)]
    pub observables: Vec<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Without this section the rank stays fixed.
    pub rank: Option<RankPolicy>,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: lrtdvp::Error| CliError::Config(e.to_string());
        self.solver.validate().map_err(wrap)?;
        if let Some(r) = &self.rank {
            r.validate().map_err(wrap)?;
        }
        if self.output.samples == 0 && self.solver.output_times.is_empty() {
            return Err(CliError::Config("output.samples must be positive".into()));
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("output.name {:?} is not a plain file stem", self.output.name)));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(CliError::Config("sweep.values is empty".into()));
            }
            if s.parameter.starts_with("sweep") {
                return Err(CliError::Config("the sweep block cannot sweep itself".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Solver settings with the output grid filled in.
    pub fn resolved_solver(&self) -> SolverConfig {
        if self.solver.output_times.is_empty() {
            self.solver.clone().with_uniform_outputs(self.output.samples)
        } else {
            self.solver.clone()
        }
    }

    /// Copy with one dotted key replaced, re-validated.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self, CliError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        let keys: Vec<&str> = path.split('.').collect();
        let (last, parents) = keys.split_last().ok_or_else(|| CliError::Config("empty sweep parameter".into()))?;
        let mut node = &mut doc;
        for k in parents {
            let table = node
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("sweep parameter {path}: {k} is not a table")))?;
            node = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("sweep parameter {path} does not name a field")))?;
        table.insert(last.to_string(), toml::Value::Float(value));
        let attempt = |doc: toml::Value| -> Result<Self, String> { doc.try_into().map_err(|e: toml::de::Error| e.to_string()) };
        let cfg = match attempt(doc.clone()) {
            Ok(c) => c,
            // integer fields such as lattice sizes
            Err(first) if value.fract() == 0.0 => {
                let mut doc = doc;
                set_path(&mut doc, &keys, toml::Value::Integer(value as i64));
                attempt(doc).map_err(|_| CliError::Config(format!("sweep parameter {path}: {first}")))?
            }
            Err(e) => return Err(CliError::Config(format!("sweep parameter {path}: {e}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(doc: &mut toml::Value, keys: &[&str], value: toml::Value) {
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        node = node.get_mut(*k).expect("path created above");
    }
    node.as_table_mut().expect("table").insert(keys[keys.len() - 1].to_string(), value);
}
