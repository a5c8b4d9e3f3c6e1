//! Time series produced by every engine, plus CSV export.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Row at an output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    pub t: f64,
    pub rank: usize,
    pub chi: f64,
    pub trace_dev: f64,
    pub entropy: f64,
    pub values: Vec<Option<f64>>,
}

/// Per accepted step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub t: f64,
    pub h: f64,
    pub rank: usize,
    pub chi: f64,
    pub trace_dev: f64,
    pub gram_drift: f64,
    pub tangency: f64,
    pub herm_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Inflate,
    Deflate,
    Rewind,
    /// Inflation requested at the rank ceiling.
    MaxRank,
    /// Deflation requested at the rank floor.
    MinRank,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Inflate => "inflate",
            EventKind::Deflate => "deflate",
            EventKind::Rewind => "rewind",
            EventKind::MaxRank => "max_rank",
            EventKind::MinRank => "min_rank",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEvent {
    pub t: f64,
    pub kind: EventKind,
    pub rank_before: usize,
    pub rank_after: usize,
    pub chi: f64,
    pub discarded_mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhs_calls: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_trace_dev: f64,
    pub max_herm_defect: f64,
    pub max_gram_drift: f64,
    /// Largest `|z^dag dz| / |dz|` over sampled derivative evaluations.
    pub max_tangency: f64,
    pub gram_refreshes: usize,
    pub renormalizations: usize,
    pub discarded_mass: f64,
    pub peak_rank: usize,
    pub rank_ceiling_hit: bool,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub observable_names: Vec<String>,
    pub samples: Vec<OutputSample>,
    pub steps: Vec<StepSample>,
    pub events: Vec<RankEvent>,
    pub diagnostics: Diagnostics,
}

impl RunRecord {
    pub fn new(observable_names: Vec<String>) -> Self {
        Self {
            observable_names,
            ..Default::default()
        }
    }

    /// Drops output rows and step samples later than `t` (used on rewind).
    pub fn truncate_after(&mut self, t: f64) {
        self.samples.retain(|s| s.t <= t);
        self.steps.retain(|s| s.t <= t);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.observable_names.iter().position(|n| n == name)?;
        Some(self.samples.iter().map(|s| s.values[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.rank).collect()
    }

    pub fn final_sample(&self) -> Option<&OutputSample> {
        self.samples.last()
    }

    pub fn final_value(&self, name: &str) -> Option<f64> {
        self.column(name)?.last().copied().flatten()
    }

    pub fn write_samples_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,rank,chi,trace_dev,entropy")?;
        for n in &self.observable_names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            write!(w, "{},{},{},{},{}", fmt_f64(s.t), s.rank, fmt_f64(s.chi), fmt_f64(s.trace_dev), fmt_f64(s.entropy))?;
            for v in &s.values {
                match v {
                    Some(x) => write!(w, ",{}", fmt_f64(*x))?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,event,M_before,M_after,chi,discarded_mass")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(e.t),
                e.kind.as_str(),
                e.rank_before,
                e.rank_after,
                fmt_f64(e.chi),
                fmt_f64(e.discarded_mass)
            )?;
        }
        Ok(())
    }

    pub fn write_steps_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,h,rank,chi,trace_dev,gram_drift,tangency,herm_defect")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(s.t),
                fmt_f64(s.h),
                s.rank,
                fmt_f64(s.chi),
                fmt_f64(s.trace_dev),
                fmt_f64(s.gram_drift),
                fmt_f64(s.tangency),
                fmt_f64(s.herm_defect)
            )?;
        }
        Ok(())
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}
