//! Variational equations of motion for `rho = z B z^dag` and the adaptive
//! driver that integrates them, optionally under rank supervision.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{dim_mismatch, Error, Result};
use crate::lindblad::{LindbladModel, LtildeWorkspace};
use crate::numerics::{
    adjoint_dot, frobenius_norm, hermiticity_defect, identity, matmul, regularized_pinv, trace, CMat, PinvConfig,
    C64, ZERO,
};
use crate::observables::{evaluate_all, Observable};
use crate::ode::{ControllerState, Dopri5, StepControl, StepOutcome};
use crate::random::{rng, SimRng};
use crate::rank::{self, ChiVariant, RankPolicy};
use crate::record::{EventKind, OutputSample, RankEvent, RunRecord, StepSample};
use crate::state::LowRankState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub t0: f64,
    pub t1: f64,
    pub max_step: f64,
    /// Times at which observables are recorded; empty means `[t0, t1]`.
    pub output_times: Vec<f64>,
    pub pinv: PinvConfig,
    pub trace_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            t0: 0.0,
            t1: 1.0,
            max_step: f64::INFINITY,
            output_times: Vec::new(),
            pinv: PinvConfig::default(),
            trace_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.t1 > self.t0) {
            return bad(format!("t1 ({}) must exceed t0 ({})", self.t1, self.t0));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return bad("integrator tolerances must be positive".into());
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive".into());
        }
        if !(self.trace_tol > 0.0) {
            return bad("trace_tol must be positive".into());
        }
        if self.output_times.iter().any(|&t| t < self.t0 || t > self.t1 || !t.is_finite()) {
            return bad("output times must lie inside [t0, t1]".into());
        }
        if self.output_times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("output times must be strictly increasing".into());
        }
        self.pinv.validate()
    }

    /// `n + 1` equally spaced output times covering `[t0, t1]`.
    pub fn with_uniform_outputs(mut self, n: usize) -> Self {
        let n = n.max(1);
        self.output_times = (0..=n)
            .map(|k| {
                if k == n {
                    self.t1
                } else {
                    self.t0 + (self.t1 - self.t0) * k as f64 / n as f64
                }
            })
            .collect();
        self
    }

    pub fn outputs(&self) -> Vec<f64> {
        if self.output_times.is_empty() {
            vec![self.t0, self.t1]
        } else {
            self.output_times.clone()
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            min_step: 1e-13 * self.t0.abs().max(self.t1.abs()).max(1.0),
            ..Default::default()
        }
    }
}

/// Length of the real state vector for an `n x m` basis.
pub fn packed_len(n: usize, m: usize) -> usize {
    2 * n * m + m * m
}

/// Real/imaginary parts of `z`, then the diagonal and upper triangle of `B`.
pub fn pack(z: &CMat, b: &CMat, out: &mut Vec<f64>) {
    let (n, m) = z.dim();
    out.clear();
    out.reserve(packed_len(n, m));
    out.extend(z.iter().map(|v| v.re));
    out.extend(z.iter().map(|v| v.im));
    out.extend((0..m).map(|i| b[[i, i]].re));
    for i in 0..m {
        for j in (i + 1)..m {
            out.push(b[[i, j]].re);
            out.push(b[[i, j]].im);
        }
    }
}

/// Inverse of [`pack`]; the returned `B` is Hermitian by construction.
pub fn unpack(y: &[f64], n: usize, m: usize) -> Result<(CMat, CMat)> {
    if y.len() != packed_len(n, m) {
        return Err(dim_mismatch("packed state", packed_len(n, m), y.len()));
    }
    let nm = n * m;
    let mut z = Array2::zeros((n, m));
    for (k, v) in z.iter_mut().enumerate() {
        *v = C64::new(y[k], y[nm + k]);
    }
    let mut b = Array2::zeros((m, m));
    let mut p = 2 * nm;
    for i in 0..m {
        b[[i, i]] = C64::new(y[p], 0.0);
        p += 1;
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let v = C64::new(y[p], y[p + 1]);
            b[[i, j]] = v;
            b[[j, i]] = v.conj();
            p += 2;
        }
    }
    Ok((z, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EomOptions {
    /// Subtract `Tr{S^-1 L}/M` so the trace of `rho` is conserved. Disabled
    /// only for comparisons against unconstrained first-order schemes.
    pub trace_projection: bool,
}

impl Default for EomOptions {
    fn default() -> Self {
        Self { trace_projection: true }
    }
}

#[derive(Debug, Clone)]
pub struct EomOutput {
    pub dz: CMat,
    pub db: CMat,
    /// `Tr{S^-1 z^dag L(rho) z}`.
    pub projected_trace: C64,
    /// Hermiticity defect of `dB` before symmetrization.
    pub herm_defect: f64,
}

/// Time derivatives of `(z, B)`:
/// `dB = (S^-1 L - Tr{S^-1 L}/M) S^-1` and
/// `dz = (1 - P) L~ S^-1 B^+`, with `L~ = L(rho) z`, `L = z^dag L~` and
/// `P = z S^-1 z^dag` applied twice for numerical tangency.
pub fn eom_rhs(
    model: &LindbladModel,
    z: &CMat,
    b: &CMat,
    s_inv: &CMat,
    pinv: &PinvConfig,
    opts: EomOptions,
    ws: &mut LtildeWorkspace,
) -> Result<EomOutput> {
    let m = z.ncols();
    if s_inv.dim() != (m, m) {
        return Err(dim_mismatch("inverse Gram matrix", (m, m), s_inv.dim()));
    }
    let s = adjoint_dot(z, z);
    let lt = model.apply_ltilde(z, b, &s, ws)?;
    let l = adjoint_dot(z, &lt);
    let x = matmul(&s_inv.view(), &l.view());
    let projected_trace = trace(&x);
    let mut db_raw = matmul(&x.view(), &s_inv.view());
    if opts.trace_projection {
        let shift = projected_trace / m as f64;
        db_raw = db_raw - s_inv.mapv(|v| v * shift);
    }
    let herm_defect = hermiticity_defect(&db_raw.view());
    let db = {
        let mut h = db_raw.clone();
        Zip::from(&mut h).and(&db_raw.t()).for_each(|a, &bt| *a = 0.5 * (*a + bt.conj()));
        h
    };

    // a basis spanning the whole space has no normal directions
    let dz = if m == z.nrows() {
        CMat::zeros(z.dim())
    } else {
        let mut r = lt - matmul(&z.view(), &x.view());
        let corr = matmul(&z.view(), &matmul(&s_inv.view(), &adjoint_dot(z, &r).view()).view());
        r -= &corr;
        let b_pinv = regularized_pinv(&b.view(), pinv)?;
        matmul(&r.view(), &matmul(&s_inv.view(), &b_pinv.view()).view())
    };
    Ok(EomOutput {
        dz,
        db,
        projected_trace,
        herm_defect,
    })
}

/// [`eom_rhs`] on a state with its cached inverse Gram matrix.
pub fn eom_rhs_state(model: &LindbladModel, state: &LowRankState, opts: EomOptions) -> Result<EomOutput> {
    eom_rhs(
        model,
        state.z(),
        state.b(),
        state.gram_inv(),
        state.pinv_config(),
        opts,
        &mut LtildeWorkspace::default(),
    )
}

/// `|z^dag dz| / |dz|` (zero for a vanishing derivative).
pub fn tangency_defect(z: &CMat, dz: &CMat) -> f64 {
    let nd = frobenius_norm(&dz.view());
    if nd == 0.0 {
        return 0.0;
    }
    frobenius_norm(&adjoint_dot(z, dz).view()) / nd
}

/// Per accepted step information handed to callbacks.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub t: f64,
    pub h: f64,
    pub rank: usize,
    pub chi: f64,
}

/// Final state plus everything recorded; `error` is set when the run
/// stopped early, in which case `state` and `record` hold the last good
/// data.
#[derive(Debug)]
pub struct Outcome {
    pub state: LowRankState,
    pub record: RunRecord,
    pub t_reached: f64,
    /// Step-size memory at `t_reached`, for resuming.
    pub controller: ControllerState,
    pub error: Option<Error>,
}

impl Outcome {
    pub fn into_result(self) -> Result<(LowRankState, RunRecord)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.state, self.record)),
        }
    }
}

struct Rhs<'a> {
    model: &'a LindbladModel,
    s_inv: CMat,
    pinv: PinvConfig,
    n: usize,
    m: usize,
    opts: EomOptions,
    ws: LtildeWorkspace,
    last_trace: C64,
    last_herm: f64,
}

impl Rhs<'_> {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (z, b) = unpack(y, self.n, self.m)?;
        let out = eom_rhs(self.model, &z, &b, &self.s_inv, &self.pinv, self.opts, &mut self.ws)?;
        self.last_trace = out.projected_trace;
        self.last_herm = out.herm_defect;
        let mut v = Vec::with_capacity(dy.len());
        pack(&out.dz, &out.db, &mut v);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite derivative".into()));
        }
        dy.copy_from_slice(&v);
        Ok(())
    }
}

/// Integration driver; without a rank policy the rank stays fixed.
pub struct Evolution<'a> {
    model: &'a LindbladModel,
    cfg: SolverConfig,
    policy: Option<RankPolicy>,
    observables: &'a [Box<dyn Observable>],
    opts: EomOptions,
    rng: SimRng,
    resume: Option<ControllerState>,
    controller: ControllerState,
}

impl<'a> Evolution<'a> {
    pub fn new(model: &'a LindbladModel, cfg: SolverConfig) -> Self {
        Self {
            model,
            cfg,
            policy: None,
            observables: &[],
            opts: EomOptions::default(),
            rng: rng(0),
            resume: None,
            controller: ControllerState { h: 0.0, err_prev: 0.0 },
        }
    }

    pub fn with_policy(mut self, policy: RankPolicy) -> Self {
        self.policy = Some(policy);
        self
    }

    pub fn with_observables(mut self, obs: &'a [Box<dyn Observable>]) -> Self {
        self.observables = obs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = rng(seed);
        self
    }

    /// Starts with the given step-size memory instead of the step heuristic.
    pub fn with_controller(mut self, mem: ControllerState) -> Self {
        self.resume = Some(mem);
        self
    }

    pub fn with_options(mut self, opts: EomOptions) -> Self {
        self.opts = opts;
        self
    }

    fn chi_variant(&self) -> ChiVariant {
        self.policy.map_or(ChiVariant::ProjectedTrace, |p| p.chi_variant)
    }

    /// Control quantity at the current state, evaluated from scratch.
    fn fresh_chi(&self, state: &LowRankState) -> Result<f64> {
        match self.chi_variant() {
            ChiVariant::ProjectedTrace => rank::chi_projected_trace(state, self.model),
            ChiVariant::ResidualNorm => rank::chi_residual(state, self.model),
            ChiVariant::ProbabilityRatio => rank::chi_probability_ratio(state),
        }
    }

    fn sample(&self, t: f64, state: &LowRankState, chi: f64) -> Result<OutputSample> {
        Ok(OutputSample {
            t,
            rank: state.rank(),
            chi,
            trace_dev: state.trace() - 1.0,
            entropy: state.entropy()?,
            values: evaluate_all(self.observables, state)?,
        })
    }

    pub fn run(self, state: LowRankState) -> Outcome {
        self.run_with(state, |_, _| {})
    }

    /// Integrates from `cfg.t0` to `cfg.t1`; `callback` sees every accepted
    /// step that survives rank supervision.
    pub fn run_with<F>(mut self, state: LowRankState, mut callback: F) -> Outcome
    where
        F: FnMut(&StepInfo, &LowRankState),
    {
        let names = self.observables.iter().map(|o| o.name().to_string()).collect();
        let mut record = RunRecord::new(names);
        let mut st = state;
        let mut t = self.cfg.t0;
        let res = self.drive(&mut st, &mut t, &mut record, &mut callback);
        record.diagnostics.peak_rank = record.diagnostics.peak_rank.max(st.rank());
        let error = res.err();
        if let Some(e) = &error {
            record.diagnostics.aborted = Some(e.to_string());
        }
        Outcome {
            state: st,
            record,
            t_reached: t,
            controller: self.controller,
            error,
        }
    }

    fn drive<F>(&mut self, st: &mut LowRankState, t: &mut f64, record: &mut RunRecord, callback: &mut F) -> Result<()>
    where
        F: FnMut(&StepInfo, &LowRankState),
    {
        self.cfg.validate()?;
        if st.dim() != self.model.dim() {
            return Err(dim_mismatch("initial state", self.model.dim(), st.dim()));
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        let policy = self.policy;
        let t1 = self.cfg.t1;
        let outputs = self.cfg.outputs();
        let n = st.dim();
        let diag_max = |a: &mut f64, v: f64| *a = a.max(v);

        // Initial inflation if the starting manifold already leaks.
        let mut chi = self.fresh_chi(st)?;
        if let Some(p) = policy {
            let mut tries = 0;
            while chi > p.eps_max && st.rank() < p.m_max.min(n) && tries < p.retry_budget {
                let before = st.rank();
                *st = rank::inflate(st, self.model, p.inflation_rule, &mut self.rng)?;
                record.events.push(event(*t, EventKind::Inflate, before, st.rank(), chi, 0.0));
                chi = self.fresh_chi(st)?;
                tries += 1;
            }
        }
        record.diagnostics.peak_rank = st.rank();

        let mut rhs = Rhs {
            model: self.model,
            s_inv: st.gram_inv().clone(),
            pinv: *st.pinv_config(),
            n,
            m: st.rank(),
            opts: self.opts,
            ws: LtildeWorkspace::default(),
            last_trace: ZERO,
            last_herm: 0.0,
        };
        let mut y = Vec::new();
        pack(st.z(), st.b(), &mut y);
        let mut stepper = Dopri5::new(self.cfg.step_control(), 0.0);
        match self.resume {
            Some(mem) => stepper.restore(mem),
            None => {
                let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| rhs.eval(y, dy);
                stepper.initial_step(&mut f, *t, &y, t1 - *t)?;
            }
        }

        let mut next_out = 0;
        while next_out < outputs.len() && outputs[next_out] < *t {
            next_out += 1;
        }
        if next_out < outputs.len() && outputs[next_out] == *t {
            record.samples.push(self.sample(*t, st, chi)?);
            next_out += 1;
        }

        let interval = policy.map_or(0.0, |p| p.checkpoint_interval);
        let mut checkpoint = Checkpoint::new(*t, stepper.memory(), st);
        let mut next_cp = if interval > 0.0 { *t + interval } else { f64::INFINITY };
        // consecutive inflations triggered at the same crossing time
        let mut retries = 0usize;
        let mut last_crossing = f64::NEG_INFINITY;
        let mut cooldown = 0usize;
        let mut ceiling_logged = false;
        let mut floor_logged = false;

        // Rebuilds the RHS context and packed vector after the state changed.
        let sync = |st: &LowRankState, rhs: &mut Rhs, y: &mut Vec<f64>, stepper: &mut Dopri5| {
            rhs.s_inv = st.gram_inv().clone();
            rhs.m = st.rank();
            pack(st.z(), st.b(), y);
            stepper.invalidate();
        };

        while *t < t1 {
            let mut target = t1.min(next_cp);
            if next_out < outputs.len() {
                target = target.min(outputs[next_out]);
            }
            let outcome = {
                let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| rhs.eval(y, dy);
                stepper.step(&mut f, *t, &mut y, target)
            };
            self.controller = stepper.memory();
            let h_used = match outcome {
                Ok(StepOutcome::Accepted { t: tn, h_used }) => {
                    *t = tn;
                    h_used
                }
                Ok(StepOutcome::Rejected { .. }) => continue,
                Err(e) => {
                    sync_stats(record, &stepper);
                    return Err(e);
                }
            };
            let (z, b) = unpack(&y, n, rhs.m)?;
            st.set_parts(z, b);

            // conservation bookkeeping
            let dev = st.trace() - 1.0;
            diag_max(&mut record.diagnostics.max_trace_dev, dev.abs());
            if dev.abs() > 10.0 * self.cfg.trace_tol {
                sync_stats(record, &stepper);
                return Err(Error::TraceViolation { t: *t, deviation: dev });
            }
            let drift = st.gram_drift();
            diag_max(&mut record.diagnostics.max_gram_drift, drift);
            diag_max(&mut record.diagnostics.max_herm_defect, rhs.last_herm);
            let tangency = match stepper.last_derivative() {
                Some(k) => {
                    let (dz, _) = unpack(k, n, rhs.m)?;
                    tangency_defect(st.z(), &dz)
                }
                None => 0.0,
            };
            diag_max(&mut record.diagnostics.max_tangency, tangency);

            chi = match self.chi_variant() {
                ChiVariant::ProjectedTrace => rhs.last_trace.norm(),
                ChiVariant::ResidualNorm => match stepper.last_derivative() {
                    Some(k) => {
                        let (dz, db) = unpack(k, n, rhs.m)?;
                        rank::residual_norm(self.model, st.z(), st.b(), &dz, &db)?
                    }
                    None => self.fresh_chi(st)?,
                },
                ChiVariant::ProbabilityRatio => rank::chi_probability_ratio(st)?,
            };

            let mut changed = false;
            if dev.abs() > self.cfg.trace_tol {
                st.scale_populations(1.0 / (1.0 + dev));
                record.diagnostics.renormalizations += 1;
                changed = true;
            }
            if drift > crate::state::GRAM_REFRESH_TOL {
                st.refresh_gram()?;
                record.diagnostics.gram_refreshes += 1;
                changed = true;
            }
            if changed {
                sync(st, &mut rhs, &mut y, &mut stepper);
            }

            if let Some(p) = policy {
                let m = st.rank();
                let suppressed = cooldown > 0;
                cooldown = cooldown.saturating_sub(1);
                if chi > p.eps_max {
                    if m >= p.m_max.min(n) {
                        if !ceiling_logged {
                            record.events.push(event(*t, EventKind::MaxRank, m, m, chi, 0.0));
                            record.diagnostics.rank_ceiling_hit = true;
                            ceiling_logged = true;
                        }
                    } else if interval > 0.0 {
                        let same = (*t - last_crossing).abs() <= 1e-12 * t.abs().max(1.0);
                        retries = if same { retries + 1 } else { 1 };
                        last_crossing = *t;
                        if retries > p.retry_budget {
                            sync_stats(record, &stepper);
                            return Err(Error::RetryBudget {
                                t: checkpoint.t,
                                reason: format!("chi = {chi:.3e} still above {:.3e} after {} inflations", p.eps_max, p.retry_budget),
                            });
                        }
                        record.events.push(event(*t, EventKind::Rewind, m, checkpoint.state.rank(), chi, 0.0));
                        *t = checkpoint.t;
                        *st = checkpoint.state.clone();
                        record.truncate_after(*t);
                        let before = st.rank();
                        *st = rank::inflate(st, self.model, p.inflation_rule, &mut self.rng)?;
                        record.events.push(event(*t, EventKind::Inflate, before, st.rank(), chi, 0.0));
                        record.diagnostics.peak_rank = record.diagnostics.peak_rank.max(st.rank());
                        stepper.restore(checkpoint.controller);
                        checkpoint = Checkpoint::new(*t, checkpoint.controller, st);
                        next_cp = *t + interval;
                        next_out = outputs.partition_point(|&o| o <= *t);
                        sync(st, &mut rhs, &mut y, &mut stepper);
                        cooldown = p.hysteresis_steps;
                        ceiling_logged = false;
                        floor_logged = false;
                        continue;
                    } else if !suppressed {
                        let before = st.rank();
                        *st = rank::inflate(st, self.model, p.inflation_rule, &mut self.rng)?;
                        record.events.push(event(*t, EventKind::Inflate, before, st.rank(), chi, 0.0));
                        record.diagnostics.peak_rank = record.diagnostics.peak_rank.max(st.rank());
                        sync(st, &mut rhs, &mut y, &mut stepper);
                        cooldown = p.hysteresis_steps;
                        floor_logged = false;
                    }
                } else if chi < p.eps_min && !suppressed {
                    if m > p.m_min {
                        let (next, discarded) = rank::deflate(st, &mut self.rng)?;
                        record.events.push(event(*t, EventKind::Deflate, m, next.rank(), chi, discarded));
                        record.diagnostics.discarded_mass += discarded;
                        *st = next;
                        sync(st, &mut rhs, &mut y, &mut stepper);
                        cooldown = p.hysteresis_steps;
                        ceiling_logged = false;
                        if interval > 0.0 {
                            checkpoint = Checkpoint::new(*t, stepper.memory(), st);
                            next_cp = *t + interval;
                            retries = 0;
                        }
                    } else if !floor_logged {
                        record.events.push(event(*t, EventKind::MinRank, m, m, chi, 0.0));
                        floor_logged = true;
                    }
                }
            }

            record.steps.push(StepSample {
                t: *t,
                h: h_used,
                rank: st.rank(),
                chi,
                trace_dev: dev,
                gram_drift: drift,
                tangency,
                herm_defect: rhs.last_herm,
            });
            callback(
                &StepInfo {
                    t: *t,
                    h: h_used,
                    rank: st.rank(),
                    chi,
                },
                st,
            );

            if next_out < outputs.len() && *t >= outputs[next_out] {
                record.samples.push(self.sample(*t, st, chi)?);
                next_out += 1;
            }
            if *t >= next_cp {
                if checkpoint.t < *t {
                    retries = 0;
                }
                checkpoint = Checkpoint::new(*t, stepper.memory(), st);
                next_cp = *t + interval;
            }
        }
        sync_stats(record, &stepper);
        Ok(())
    }
}

fn sync_stats(record: &mut RunRecord, stepper: &Dopri5) {
    record.diagnostics.rhs_calls = stepper.stats.rhs_calls;
    record.diagnostics.accepted_steps = stepper.stats.accepted;
    record.diagnostics.rejected_steps = stepper.stats.rejected;
}

fn event(t: f64, kind: EventKind, before: usize, after: usize, chi: f64, discarded: f64) -> RankEvent {
    RankEvent {
        t,
        kind,
        rank_before: before,
        rank_after: after,
        chi,
        discarded_mass: discarded,
    }
}

/// Fixed-rank integration.
pub fn integrate(
    state: LowRankState,
    model: &LindbladModel,
    cfg: &SolverConfig,
    observables: &[Box<dyn Observable>],
) -> Outcome {
    Evolution::new(model, cfg.clone()).with_observables(observables).run(state)
}

/// Resume helper: the state stored in a checkpoint with its step memory.
pub fn restore_checkpoint(cp: &Checkpoint) -> (LowRankState, f64, ControllerState) {
    (cp.state.clone(), cp.t, cp.controller)
}

/// Orthonormal `z` spanning the full space, for exact-manifold runs.
pub fn full_rank_state(rho: &CMat, pinv: PinvConfig) -> Result<LowRankState> {
    let n = rho.nrows();
    if rho.dim() != (n, n) {
        return Err(dim_mismatch("density matrix", (n, n), rho.dim()));
    }
    LowRankState::new(identity(n), rho.clone(), pinv)
}
