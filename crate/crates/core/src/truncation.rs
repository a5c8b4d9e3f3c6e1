//! Ensemble truncation: first-order Kraus steps followed by spectral
//! truncation of `rho = C C^dag`.

use ndarray::{concatenate, s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::hilbert::SparseOperator;
use crate::lindblad::{LindbladModel, LtildeWorkspace};
use crate::numerics::{
    adjoint, adjoint_dot, frobenius_norm, hermitian_eigen, hermitian_part, identity, max_abs, trace_of_product, CMat, C64,
};
use crate::observables::{evaluate_all, Observable};
use crate::record::{EventKind, OutputSample, RankEvent, RunRecord};
use crate::state::{entropy_of, Expectation, LowRankState};
use crate::tdvp::{eom_rhs_state, EomOptions, SolverConfig};

/// `rho = C C^dag`; column norms squared are the populations.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationState {
    c: CMat,
}

impl TruncationState {
    pub fn from_columns(c: CMat) -> Result<Self> {
        if c.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument("truncation state needs at least one column".into()));
        }
        Ok(Self { c })
    }

    /// `C = eta diag(sqrt(p))` from the spectral form of `state`.
    pub fn from_lowrank(state: &LowRankState) -> Result<Self> {
        let sp = state.diagonalize()?;
        let mut c = sp.eta;
        for (mut col, &p) in c.axis_iter_mut(Axis(1)).zip(sp.probabilities.iter()) {
            col.mapv_inplace(|v| v * p.sqrt());
        }
        Self::from_columns(c)
    }

    pub fn columns(&self) -> &CMat {
        &self.c
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    pub fn trace(&self) -> f64 {
        self.c.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Eigenvalues of `C^dag C` (the nonzero spectrum of `rho`), descending.
    pub fn probabilities(&self) -> Result<Array1<f64>> {
        let g = hermitian_part(&adjoint_dot(&self.c, &self.c).view());
        Ok(hermitian_eigen(&g.view())?.values)
    }

    pub fn to_dense(&self) -> CMat {
        hermitian_part(&self.c.dot(&adjoint(&self.c.view())).view())
    }

    pub fn to_lowrank(&self, pinv: crate::numerics::PinvConfig) -> Result<LowRankState> {
        LowRankState::new(self.c.clone(), identity(self.rank()), pinv)
    }
}

impl Expectation for TruncationState {
    fn hilbert_dim(&self) -> usize {
        self.dim()
    }

    fn expect(&self, op: &SparseOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(dim_mismatch("expectation", self.dim(), op.dim()));
        }
        let ac = op.apply(&self.c)?;
        Ok(adjoint_dot(&self.c, &ac).diag().sum())
    }
}

/// How many spectral factors survive a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Keep {
    /// Smallest rank whose discarded weight is at most `eps_max`.
    Threshold { eps_max: f64, max_rank: Option<usize> },
    Rank(usize),
}

#[derive(Debug, Clone)]
pub struct TruncationReport {
    pub rank: usize,
    /// Spectrum of `T T^dag` divided by its trace, descending.
    pub spectrum: Array1<f64>,
    /// `1 - sum(retained)` in normalized weights.
    pub truncation_error: f64,
    /// `Tr{T T^dag}` before normalization.
    pub raw_trace: f64,
}

impl TruncationReport {
    pub fn retained(&self) -> &[f64] {
        &self.spectrum.as_slice().unwrap()[..self.rank]
    }

    pub fn discarded_sum(&self) -> f64 {
        self.spectrum.iter().skip(self.rank).sum()
    }
}

/// Applies `kraus` to `state` and keeps the dominant spectral factors.
/// With `normalize` the output has unit trace; otherwise the retained
/// factors keep their raw weights.
pub fn kraus_truncate(
    state: &TruncationState,
    kraus: &[SparseOperator],
    keep: Keep,
    normalize: bool,
) -> Result<(TruncationState, TruncationReport)> {
    let blocks = kraus.iter().map(|k| k.apply(&state.c)).collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let t = concatenate(Axis(1), &views).expect("equal heights");
    let g = hermitian_part(&adjoint_dot(&t, &t).view());
    let eig = hermitian_eigen(&g.view())?;
    let w = eig.values.mapv(|v| v.max(0.0));
    let raw_trace: f64 = w.sum();
    if !(raw_trace > 0.0) {
        return Err(Error::InvalidArgument("Kraus step produced a zero state".into()));
    }
    let spectrum = w.mapv(|v| v / raw_trace);
    let error_at = |r: usize| 1.0 - spectrum.iter().take(r).sum::<f64>();
    let full = spectrum.len();
    let rank = match keep {
        Keep::Rank(m) => {
            if m == 0 {
                return Err(Error::InvalidArgument("rank must be positive".into()));
            }
            m.min(full)
        }
        Keep::Threshold { eps_max, max_rank } => {
            let cap = max_rank.unwrap_or(full).min(full).max(1);
            match (1..=cap).find(|&r| error_at(r) <= eps_max) {
                Some(r) => r,
                None => {
                    return Err(Error::TruncationUnreachable {
                        eps_max,
                        best: error_at(cap),
                    })
                }
            }
        }
    };
    let mut c = t.dot(&eig.vectors.slice(s![.., ..rank]));
    if normalize {
        let kept: f64 = w.iter().take(rank).sum();
        c.mapv_inplace(|v| v / kept.sqrt());
    }
    let report = TruncationReport {
        rank,
        truncation_error: error_at(rank),
        spectrum,
        raw_trace,
    };
    Ok((TruncationState::from_columns(c)?, report))
}

/// One Euler Kraus step truncated at `eps_max`, renormalized to unit trace.
pub fn truncation_step(
    state: &TruncationState,
    model: &LindbladModel,
    dt: f64,
    eps_max: f64,
) -> Result<(TruncationState, TruncationReport)> {
    if !(eps_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps_max must be non-negative, got {eps_max}")));
    }
    let kraus = model.kraus_operators(dt)?;
    kraus_truncate(state, &kraus, Keep::Threshold { eps_max, max_rank: None }, true)
}

/// One Euler Kraus step keeping exactly `rank` factors, without renormalizing.
pub fn fixed_rank_step(
    state: &TruncationState,
    model: &LindbladModel,
    dt: f64,
    rank: usize,
) -> Result<(TruncationState, TruncationReport)> {
    let kraus = model.kraus_operators(dt)?;
    kraus_truncate(state, &kraus, Keep::Rank(rank), false)
}

#[derive(Debug, Clone, Default)]
pub struct ProbeReport {
    pub dts: Vec<f64>,
    /// `|rho_variational - rho_truncated|_F` per step size.
    pub differences: Vec<f64>,
    /// `max_j |p~_j - p_j - L_jj dt|` per step size.
    pub shift_defects: Vec<f64>,
    /// Least-squares slope of `ln d` against `ln dt`.
    pub slope: Option<f64>,
    pub note: Option<String>,
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Compares one unconstrained variational Euler step with one fixed-rank
/// truncation step from the same diagonal-form state, for each `dt`.
pub fn equivalence_probe(state: &LowRankState, model: &LindbladModel, dts: &[f64]) -> Result<ProbeReport> {
    let z = state.z();
    let m = state.rank();
    if max_abs(&(state.gram() - &identity(m)).view()) > 1e-10 {
        return Err(Error::InvalidArgument("probe needs an orthonormal basis".into()));
    }
    let b = state.b();
    let off = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| b[[i, j]].norm())
        .fold(0.0, f64::max);
    if off > 1e-12 {
        return Err(Error::InvalidArgument("probe needs a diagonal population matrix".into()));
    }
    let p: Vec<f64> = (0..m).map(|j| b[[j, j]].re).collect();
    let mut report = ProbeReport {
        dts: dts.to_vec(),
        ..Default::default()
    };
    let mut sorted = p.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // out-of-span directions carry zero weight, so the smallest p_j must
    // also be separated from zero
    sorted.push(0.0);
    if sorted.windows(2).any(|w| w[0] - w[1] < 1e-6) {
        report.note = Some("degenerate populations; perturbative comparison skipped".into());
        return Ok(report);
    }

    let d = eom_rhs_state(model, state, EomOptions { trace_projection: false })?;
    let lt = model.apply_ltilde(z, b, state.gram(), &mut LtildeWorkspace::default())?;
    let l = adjoint_dot(z, &lt);
    let mut c = z.clone();
    for (mut col, &pj) in c.axis_iter_mut(Axis(1)).zip(&p) {
        col.mapv_inplace(|v| v * pj.sqrt());
    }
    let start = TruncationState::from_columns(c)?;

    for &dt in dts {
        let z1 = z + &d.dz.mapv(|v| v * dt);
        let b1 = b + &d.db.mapv(|v| v * dt);
        let rho_var = z1.dot(&b1).dot(&adjoint(&z1.view()));
        let (next, rep) = fixed_rank_step(&start, model, dt, m)?;
        let diff = frobenius_norm(&(&rho_var - &next.to_dense()).view());
        report.differences.push(diff);

        // eigenvalue shifts, matched in descending order
        let raw: Vec<f64> = rep.retained().iter().map(|v| v * rep.raw_trace).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| p[j].partial_cmp(&p[i]).unwrap());
        let defect = order
            .iter()
            .zip(&raw)
            .map(|(&j, &pt)| (pt - p[j] - l[[j, j]].re * dt).abs())
            .fold(0.0, f64::max);
        report.shift_defects.push(defect);
    }
    if report.differences.iter().all(|&x| x <= 1e-14) {
        report.note = Some("no difference beyond rounding at any step size".into());
    } else {
        report.slope = log_log_slope(dts, &report.differences);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub dt: f64,
    pub eps_max: f64,
    pub max_rank: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps_max: 1e-3,
            max_rank: None,
        }
    }
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub state: TruncationState,
    pub record: RunRecord,
    pub t_reached: f64,
    pub error: Option<Error>,
}

fn baseline_sample(
    t: f64,
    st: &TruncationState,
    chi: f64,
    obs: &[Box<dyn Observable>],
) -> Result<OutputSample> {
    Ok(OutputSample {
        t,
        rank: st.rank(),
        chi,
        trace_dev: st.trace() - 1.0,
        entropy: entropy_of(st.probabilities()?.iter().copied()),
        values: evaluate_all(obs, st)?,
    })
}

/// Fixed-step truncation run over `[cfg.t0, cfg.t1]`, landing exactly on
/// the output times. Failures stop the run and keep the partial record.
pub fn run_baseline(
    initial: &LowRankState,
    model: &LindbladModel,
    cfg: &SolverConfig,
    bl: &BaselineConfig,
    observables: &[Box<dyn Observable>],
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    if !(bl.dt > 0.0) || !(bl.eps_max >= 0.0) {
        return Err(Error::InvalidArgument("baseline needs dt > 0 and eps_max >= 0".into()));
    }
    let mut st = TruncationState::from_lowrank(initial)?;
    let names = observables.iter().map(|o| o.name().to_string()).collect();
    let mut record = RunRecord::new(names);
    record.diagnostics.peak_rank = st.rank();
    let outputs = cfg.outputs();
    let mut next_out = 0;
    let mut t = cfg.t0;
    let mut chi = f64::NAN;
    let tiny = 1e-12 * cfg.t1.abs().max(1.0);
    let mut error = None;
    let mut step = || -> Result<()> {
        loop {
            while next_out < outputs.len() && outputs[next_out] <= t + tiny {
                record.samples.push(baseline_sample(outputs[next_out], &st, chi, observables)?);
                next_out += 1;
            }
            if t >= cfg.t1 - tiny {
                return Ok(());
            }
            let target = outputs.get(next_out).copied().unwrap_or(cfg.t1).min(cfg.t1);
            let h = bl.dt.min(target - t);
            let kraus = model.kraus_operators(h)?;
            let keep = Keep::Threshold {
                eps_max: bl.eps_max,
                max_rank: bl.max_rank,
            };
            let before = st.rank();
            let (next, rep) = kraus_truncate(&st, &kraus, keep, true)?;
            st = next;
            t = if target - t <= bl.dt { target } else { t + h };
            chi = rep.truncation_error;
            let d = &mut record.diagnostics;
            d.accepted_steps += 1;
            d.rhs_calls += 1;
            d.discarded_mass += rep.truncation_error;
            d.peak_rank = d.peak_rank.max(st.rank());
            d.max_trace_dev = d.max_trace_dev.max((st.trace() - 1.0).abs());
            if st.rank() != before {
                record.events.push(RankEvent {
                    t,
                    kind: if st.rank() > before { EventKind::Inflate } else { EventKind::Deflate },
                    rank_before: before,
                    rank_after: st.rank(),
                    chi,
                    discarded_mass: rep.truncation_error,
                });
            }
        }
    };
    if let Err(e) = step() {
        record.diagnostics.aborted = Some(e.to_string());
        error = Some(e);
    }
    Ok(BaselineOutcome {
        state: st,
        record,
        t_reached: t,
        error,
    })
}

/// `Tr{rho_a rho_b}` for two truncation states.
pub fn overlap_columns(a: &TruncationState, b: &TruncationState) -> f64 {
    let x = adjoint_dot(&a.c, &b.c);
    trace_of_product(&x, &adjoint(&x.view())).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{pauli_site, LatticeSpec, Pauli};
    use crate::numerics::{max_abs_diff, PinvConfig, ONE, ZERO};
    use crate::random::{random_density, random_unitary, rng};
    use ndarray::{array, Array2};

    fn decay_qubit(gamma: f64) -> LindbladModel {
        let l = LatticeSpec::new(1, 1).unwrap();
        let sm = pauli_site(&l, 0, Pauli::Minus).unwrap();
        LindbladModel::new(SparseOperator::zeros(2), vec![sm.scaled(C64::new(gamma.sqrt(), 0.0))]).unwrap()
    }

    fn diag_state(u: &CMat, p: &[f64]) -> LowRankState {
        let m = p.len();
        let z = u.slice(s![.., ..m]).to_owned();
        let b = Array2::from_shape_fn((m, m), |(i, j)| if i == j { C64::new(p[i], 0.0) } else { ZERO });
        LowRankState::new(z, b, PinvConfig::default()).unwrap()
    }

    #[test]
    fn no_dynamics_keeps_state() {
        let mut r = rng(5);
        let m = LindbladModel::new(SparseOperator::zeros(6), vec![]).unwrap();
        let st = TruncationState::from_lowrank(&diag_state(&random_unitary(&mut r, 6), &[0.6, 0.3, 0.1])).unwrap();
        let (next, rep) = truncation_step(&st, &m, 0.1, 1e-3).unwrap();
        assert_eq!(rep.rank, 3);
        assert!(max_abs_diff(&next.to_dense(), &st.to_dense()) < 1e-13);
    }

    #[test]
    fn decay_euler_populations() {
        let (gamma, dt) = (0.7, 1e-3);
        let up = TruncationState::from_columns(array![[ONE], [ZERO]]).unwrap();
        let (next, rep) = truncation_step(&up, &decay_qubit(gamma), dt, 1e-12).unwrap();
        let rho = next.to_dense();
        assert!((rho[[0, 0]].re - (1.0 - gamma * dt)).abs() < 10.0 * dt * dt);
        assert!((rho[[1, 1]].re - gamma * dt).abs() < 10.0 * dt * dt);
        assert_eq!(rep.rank, 2);
    }

    #[test]
    fn spectrum_matches_dense_euler_step() {
        let mut r = rng(8);
        for _ in 0..4 {
            let model = LindbladModel::random(&mut r, 8, 2, 3);
            let rho = random_density(&mut r, 8, 3);
            let st = TruncationState::from_lowrank(&crate::tdvp::full_rank_state(&rho, PinvConfig::default()).unwrap())
                .unwrap();
            let mut errs = Vec::new();
            let dts = [1e-2, 1e-3, 1e-4];
            for &dt in &dts {
                let (_, rep) = fixed_rank_step(&st, &model, dt, 8).unwrap();
                let target = &rho + &model.apply_liouvillian_dense(&rho).unwrap().mapv(|v| v * dt);
                let w = hermitian_eigen(&hermitian_part(&target.view()).view()).unwrap().values;
                let got: Vec<f64> = rep.spectrum.iter().map(|v| v * rep.raw_trace).collect();
                let err = w.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                errs.push(err);
            }
            let slope = log_log_slope(&dts, &errs).unwrap();
            assert!(slope > 1.8, "slope {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn accounting_and_rank_bound() {
        let mut r = rng(9);
        let model = LindbladModel::random(&mut r, 10, 3, 3);
        let rho = random_density(&mut r, 10, 2);
        let st = TruncationState::from_lowrank(&crate::tdvp::full_rank_state(&rho, PinvConfig::default()).unwrap())
            .unwrap();
        for eps in [1e-1, 1e-2, 1e-4, 1e-8] {
            let (next, rep) = truncation_step(&st, &model, 0.05, eps).unwrap();
            assert!(next.rank() <= st.rank() * 4);
            assert!(rep.truncation_error <= eps);
            assert!((rep.truncation_error - rep.discarded_sum()).abs() < 1e-12);
            assert!(rep.spectrum.iter().all(|&p| p >= -1e-12));
            assert!((next.trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_threshold_is_reported() {
        let mut r = rng(10);
        let model = LindbladModel::random(&mut r, 6, 2, 3);
        let rho = random_density(&mut r, 6, 3);
        let st = TruncationState::from_lowrank(&crate::tdvp::full_rank_state(&rho, PinvConfig::default()).unwrap())
            .unwrap();
        let kraus = model.kraus_operators(0.1).unwrap();
        let keep = Keep::Threshold {
            eps_max: 1e-12,
            max_rank: Some(1),
        };
        assert!(matches!(kraus_truncate(&st, &kraus, keep, true), Err(Error::TruncationUnreachable { .. })));
    }

    #[test]
    fn probe_slope_on_qubit_decay() {
        let st = diag_state(&identity(2), &[0.7, 0.3]);
        let dts = [1e-2, 1e-3, 1e-4, 1e-5];
        let rep = equivalence_probe(&st, &decay_qubit(1.0), &dts).unwrap();
        let slope = rep.slope.unwrap();
        assert!((1.8..=2.2).contains(&slope), "{rep:?}");
        for (d, &dt) in rep.shift_defects.iter().zip(&dts) {
            assert!(*d < 10.0 * dt * dt);
        }
    }

    #[test]
    fn probe_random_models() {
        let mut r = rng(11);
        for _ in 0..3 {
            let model = LindbladModel::random(&mut r, 8, 2, 3);
            let st = diag_state(&random_unitary(&mut r, 8), &[0.5, 0.3, 0.2]);
            let rep = equivalence_probe(&st, &model, &[1e-2, 1e-3, 1e-4, 1e-5]).unwrap();
            let slope = rep.slope.unwrap();
            assert!((1.8..=2.2).contains(&slope), "{rep:?}");
        }
    }

    #[test]
    fn probe_frozen_and_degenerate() {
        let frozen = LindbladModel::new(SparseOperator::zeros(4), vec![]).unwrap();
        let st = diag_state(&identity(4), &[0.6, 0.4]);
        let rep = equivalence_probe(&st, &frozen, &[1e-2, 1e-3]).unwrap();
        assert!(rep.differences.iter().all(|&d| d <= 1e-14));
        assert!(rep.slope.is_none());
        let st = diag_state(&identity(4), &[0.5, 0.5]);
        let rep = equivalence_probe(&st, &decay_qubit_pair(), &[1e-2, 1e-3]).unwrap();
        assert!(rep.note.is_some() && rep.differences.is_empty());
    }

    fn decay_qubit_pair() -> LindbladModel {
        let l = LatticeSpec::new(2, 1).unwrap();
        let sm = pauli_site(&l, 0, Pauli::Minus).unwrap();
        LindbladModel::new(SparseOperator::zeros(4), vec![sm]).unwrap()
    }

    #[test]
    fn baseline_run_tracks_decay() {
        let gamma = 1.0;
        let up = LowRankState::pure(&array![ONE, ZERO], PinvConfig::default()).unwrap();
        let cfg = SolverConfig {
            t1: 2.0,
            ..Default::default()
        }
        .with_uniform_outputs(4);
        let sz = pauli_site(&LatticeSpec::new(1, 1).unwrap(), 0, Pauli::Z).unwrap();
        let obs: Vec<Box<dyn Observable>> = vec![Box::new(crate::observables::Expect::new("sz", sz))];
        let bl = BaselineConfig {
            dt: 1e-4,
            eps_max: 1e-10,
            max_rank: None,
        };
        let out = run_baseline(&up, &decay_qubit(gamma), &cfg, &bl, &obs).unwrap();
        assert!(out.error.is_none());
        assert_eq!(out.record.times(), cfg.output_times);
        for s in &out.record.samples {
            let exact = 2.0 * (-gamma * s.t).exp() - 1.0;
            assert!((s.values[0].unwrap() - exact).abs() < 1e-3);
        }
        assert_eq!(out.record.events[0].kind, EventKind::Inflate);
        assert!((overlap_columns(&out.state, &out.state) - out.state.to_dense().iter().map(|v| v.norm_sqr()).sum::<f64>()).abs() < 1e-12);
    }
}
