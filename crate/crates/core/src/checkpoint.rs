//! Snapshots of an integration: state, time and step-size memory.
//!
//! The text format stores every float with 17 significant digits, so a
//! save/load cycle reproduces the snapshot bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::{CMat, PinvConfig, C64};
use crate::ode::ControllerState;
use crate::record::fmt_f64;
use crate::state::LowRankState;

pub const FORMAT_TAG: &str = "lrtdvp-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub controller: ControllerState,
    pub state: LowRankState,
}

impl Checkpoint {
    pub fn new(t: f64, controller: ControllerState, state: &LowRankState) -> Self {
        Self {
            t,
            controller,
            state: state.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let st = &self.state;
        let p = st.pinv_config();
        let mut out = String::new();
        writeln!(out, "{FORMAT_TAG} v{FORMAT_VERSION}").unwrap();
        writeln!(out, "t {}", fmt_f64(self.t)).unwrap();
        writeln!(out, "h {}", fmt_f64(self.controller.h)).unwrap();
        writeln!(out, "err_prev {}", fmt_f64(self.controller.err_prev)).unwrap();
        writeln!(out, "dims {} {}", st.dim(), st.rank()).unwrap();
        writeln!(out, "pinv {} {} {}", fmt_f64(p.atol), fmt_f64(p.rtol), p.filter_exponent).unwrap();
        for (name, m) in [("z", st.z()), ("b", st.b()), ("s", st.gram())] {
            writeln!(out, "{name}").unwrap();
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{} {}", fmt_f64(v.re), fmt_f64(v.im))).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Format(format!("missing {what}")));
        let header = next("header")?;
        let expected = format!("{FORMAT_TAG} v{FORMAT_VERSION}");
        if header.trim() != expected {
            return Err(Error::Format(format!("unsupported header {header:?}, expected {expected:?}")));
        }
        let t = keyed(next("t")?, "t")?[0];
        let h = keyed(next("h")?, "h")?[0];
        let err_prev = keyed(next("err_prev")?, "err_prev")?[0];
        let dims = keyed(next("dims")?, "dims")?;
        if dims.len() != 2 {
            return Err(Error::Format("dims needs two entries".into()));
        }
        let (n, m) = (dims[0] as usize, dims[1] as usize);
        let pv = keyed(next("pinv")?, "pinv")?;
        if pv.len() != 3 {
            return Err(Error::Format("pinv needs three entries".into()));
        }
        let pinv = PinvConfig {
            atol: pv[0],
            rtol: pv[1],
            filter_exponent: pv[2] as u32,
        };
        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<CMat> {
            let tag = next(name)?;
            if tag.trim() != name {
                return Err(Error::Format(format!("expected block {name:?}, found {tag:?}")));
            }
            let mut a = Array2::zeros((rows, cols));
            for i in 0..rows {
                let vals = floats(next(name)?)?;
                if vals.len() != 2 * cols {
                    return Err(Error::Format(format!("block {name} row {i} has {} numbers", vals.len())));
                }
                for j in 0..cols {
                    a[[i, j]] = C64::new(vals[2 * j], vals[2 * j + 1]);
                }
            }
            Ok(a)
        };
        let z = read_block("z", n, m)?;
        let b = read_block("b", m, m)?;
        let s = read_block("s", m, m)?;
        if next("end")?.trim() != "end" {
            return Err(Error::Format("missing end marker".into()));
        }
        Ok(Self {
            t,
            controller: ControllerState { h, err_prev },
            state: LowRankState::from_parts(z, b, s, pinv)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|w| w.parse::<f64>().map_err(|e| Error::Format(format!("bad number {w:?}: {e}"))))
        .collect()
}

fn keyed(line: &str, key: &str) -> Result<Vec<f64>> {
    let mut it = line.splitn(2, ' ');
    if it.next() != Some(key) {
        return Err(Error::Format(format!("expected key {key:?} in {line:?}")));
    }
    floats(it.next().unwrap_or(""))
}
