//! Comparison of two sample records.

use std::path::Path;

use lrtdvp::numerics::{CMat, C64};
use lrtdvp::state::overlap;

use crate::CliError;

/// Columns that are run diagnostics rather than physics.
const DIAGNOSTIC: [&str; 4] = ["t", "rank", "chi", "trace_dev"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    fn times(&self) -> Result<Vec<f64>, CliError> {
        self.column("t")
            .ok_or_else(|| CliError::Input("record has no t column".into()))?
            .into_iter()
            .map(|v| v.ok_or_else(|| CliError::Input("missing time value".into())))
            .collect()
    }
}

fn parse_cell(s: &str) -> Result<Option<f64>, CliError> {
    match s.trim() {
        "" => Ok(None),
        v => v.parse().map(Some).map_err(|_| CliError::Input(format!("not a number: {v:?}"))),
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let ctx = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(ctx)?;
    let columns = r.headers().map_err(ctx)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(ctx)?.iter().map(parse_cell).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(Table { columns, rows })
}

pub fn read_state(path: &Path) -> Result<CMat, CliError> {
    let t = read_table(path)?;
    let get = |name| t.column(name).ok_or_else(|| CliError::Input(format!("{}: missing column {name}", path.display())));
    let (i, j, re, im) = (get("i")?, get("j")?, get("re")?, get("im")?);
    let n = (t.rows.len() as f64).sqrt().round() as usize;
    if n * n != t.rows.len() {
        return Err(CliError::Input(format!("{}: not a square matrix", path.display())));
    }
    let mut rho = CMat::zeros((n, n));
    for k in 0..t.rows.len() {
        let idx = |v: Option<f64>| v.map(|x| x as usize).filter(|&x| x < n);
        let (Some(a), Some(b)) = (idx(i[k]), idx(j[k])) else {
            return Err(CliError::Input(format!("{}: bad index on row {}", path.display(), k + 1)));
        };
        rho[[a, b]] = C64::new(re[k].unwrap_or(f64::NAN), im[k].unwrap_or(f64::NAN));
    }
    Ok(rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDiff {
    pub name: String,
    pub max_abs: f64,
    /// Rows where exactly one side is undefined.
    pub mismatched_missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub columns: Vec<ColumnDiff>,
    pub overlap: Option<f64>,
    pub tolerance: f64,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.columns
            .iter()
            .filter(|c| !DIAGNOSTIC.contains(&c.name.as_str()))
            .all(|c| c.max_abs <= self.tolerance && c.mismatched_missing == 0)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<16} {:>14} {:>8}\n", "column", "max |diff|", "missing");
        for c in &self.columns {
            s += &format!("{:<16} {:>14.6e} {:>8}\n", c.name, c.max_abs, c.mismatched_missing);
        }
        if let Some(o) = self.overlap {
            s += &format!("final-state overlap {o:.12}\n");
        }
        s += &format!("{} (tolerance {:e})\n", if self.passed() { "PASS" } else { "FAIL" }, self.tolerance);
        s
    }
}

fn interpolate(ts: &[f64], ys: &[Option<f64>], t: f64) -> Option<f64> {
    let k = ts.partition_point(|&x| x < t);
    if k < ts.len() && (ts[k] - t).abs() <= 1e-12 * t.abs().max(1.0) {
        return ys[k];
    }
    if k == 0 || k == ts.len() {
        return None;
    }
    let (t0, t1) = (ts[k - 1], ts[k]);
    let (y0, y1) = (ys[k - 1]?, ys[k]?);
    Some(y0 + (y1 - y0) * (t - t0) / (t1 - t0))
}

pub fn compare(a: &Table, b: &Table, interpolate_grid: bool, tolerance: f64) -> Result<Summary, CliError> {
    let (ta, tb) = (a.times()?, b.times()?);
    let same_grid = ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    if !same_grid && !interpolate_grid {
        return Err(CliError::Input(format!(
            "time grids differ ({} vs {} rows); pass --interpolate to compare anyway",
            ta.len(),
            tb.len()
        )));
    }
    let mut columns = Vec::new();
    for name in a.columns.iter().filter(|c| c.as_str() != "t") {
        let (Some(ya), Some(yb)) = (a.column(name), b.column(name)) else {
            continue;
        };
        let mut max_abs: f64 = 0.0;
        let mut mismatched_missing = 0;
        for (k, &t) in ta.iter().enumerate() {
            let vb = if same_grid { yb[k] } else { interpolate(&tb, &yb, t) };
            if !same_grid && (t < tb[0] || t > tb[tb.len() - 1]) {
                continue;
            }
            match (ya[k], vb) {
                (Some(x), Some(y)) if x.is_nan() && y.is_nan() => {}
                (Some(x), Some(y)) => max_abs = max_abs.max((x - y).abs()),
                (None, None) => {}
                _ => mismatched_missing += 1,
            }
        }
        columns.push(ColumnDiff {
            name: name.clone(),
            max_abs,
            mismatched_missing,
        });
    }
    Ok(Summary {
        columns,
        overlap: None,
        tolerance,
    })
}

pub fn state_overlap(a: &Path, b: &Path) -> Result<f64, CliError> {
    let (ra, rb) = (read_state(a)?, read_state(b)?);
    overlap(&ra, &rb).map_err(|e| CliError::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(ts: &[f64], ys: &[Option<f64>]) -> Table {
        Table {
            columns: vec!["t".into(), "rank".into(), "m".into()],
            rows: ts.iter().zip(ys).map(|(&t, &y)| vec![Some(t), Some(1.0), y]).collect(),
        }
    }

    #[test]
    fn identical_records_agree() {
        let a = table(&[0.0, 1.0], &[Some(0.5), None]);
        let s = compare(&a, &a, false, 0.0).unwrap();
        assert!(s.columns.iter().all(|c| c.max_abs == 0.0 && c.mismatched_missing == 0));
        assert!(s.passed());
    }

    #[test]
    fn grids_must_match_unless_interpolating() {
        let a = table(&[0.0, 1.0, 2.0], &[Some(0.0), Some(1.0), Some(2.0)]);
        let b = table(&[0.0, 2.0], &[Some(0.0), Some(2.0)]);
        assert!(compare(&a, &b, false, 1e-9).is_err());
        let s = compare(&a, &b, true, 1e-9).unwrap();
        assert!(s.passed(), "{}", s.render());
        let c = table(&[0.0, 2.0], &[Some(0.0), Some(2.5)]);
        let s = compare(&a, &c, true, 1e-3).unwrap();
        assert!(!s.passed());
        assert!((s.columns[1].max_abs - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_values_are_flagged() {
        let a = table(&[0.0], &[Some(1.0)]);
        let b = table(&[0.0], &[None]);
        let s = compare(&a, &b, false, 1.0).unwrap();
        assert_eq!(s.columns[1].mismatched_missing, 1);
        assert!(!s.passed());
    }
}
