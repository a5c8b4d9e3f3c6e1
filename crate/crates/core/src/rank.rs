//! Control quantities and rank changes of the variational basis.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{LindbladModel, LtildeWorkspace};
use crate::numerics::{
    adjoint, adjoint_dot, frobenius_norm, hermitian_eigen, hermitian_part, orthonormal_factor, orthonormalize, trace,
    CMat, C64, I, ZERO,
};
use crate::observables::Observable;
use crate::random::{random_orthogonal_vector, SimRng};
use crate::state::LowRankState;
use crate::tdvp::{eom_rhs_state, EomOptions, Evolution, Outcome, SolverConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiVariant {
    /// `|rho' - L(rho)|_F` for the variational derivative.
    ResidualNorm,
    /// `|Tr{S^-1 L}|`, the probability flow out of the manifold.
    #[default]
    ProjectedTrace,
    /// Smallest over largest eigenvalue of `rho` within the basis.
    ProbabilityRatio,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationRule {
    /// Dominant direction of the out-of-manifold part of `L(rho) z`.
    #[default]
    LeakageSvd,
    RandomOrthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankPolicy {
    pub chi_variant: ChiVariant,
    pub eps_max: f64,
    pub eps_min: f64,
    pub m_min: usize,
    pub m_max: usize,
    /// Rewind distance for inflations; 0 inflates in place.
    pub checkpoint_interval: f64,
    pub inflation_rule: InflationRule,
    /// Inflations allowed from a single checkpoint before giving up.
    pub retry_budget: usize,
    /// Accepted steps after a rank event during which further in-place
    /// events are suppressed.
    pub hysteresis_steps: usize,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self {
            chi_variant: ChiVariant::ProjectedTrace,
            eps_max: 1e-3,
            eps_min: 1e-5,
            m_min: 1,
            m_max: 64,
            checkpoint_interval: 0.0,
            inflation_rule: InflationRule::LeakageSvd,
            retry_budget: 5,
            hysteresis_steps: 1,
        }
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eps_max > 0.0) || !(self.eps_min >= 0.0) || self.eps_min >= self.eps_max {
            return bad(format!("need 0 <= eps_min < eps_max, got {} and {}", self.eps_min, self.eps_max));
        }
        if self.m_min == 0 || self.m_min > self.m_max {
            return bad(format!("need 1 <= m_min <= m_max, got {} and {}", self.m_min, self.m_max));
        }
        if !(self.checkpoint_interval >= 0.0) || !self.checkpoint_interval.is_finite() {
            return bad("checkpoint_interval must be finite and non-negative".into());
        }
        if self.retry_budget == 0 {
            return bad("retry_budget must be at least 1".into());
        }
        Ok(())
    }
}

fn fresh_ltilde(state: &LowRankState, model: &LindbladModel) -> Result<CMat> {
    let s = adjoint_dot(state.z(), state.z());
    model.apply_ltilde(state.z(), state.b(), &s, &mut LtildeWorkspace::default())
}

/// `|Tr{S^-1 z^dag L(rho) z}|`.
pub fn chi_projected_trace(state: &LowRankState, model: &LindbladModel) -> Result<f64> {
    let lt = fresh_ltilde(state, model)?;
    let l = adjoint_dot(state.z(), &lt);
    Ok(trace(&state.gram_inv().dot(&l)).norm())
}

/// Residual of the variational derivative at the current state.
pub fn chi_residual(state: &LowRankState, model: &LindbladModel) -> Result<f64> {
    let d = eom_rhs_state(model, state, EomOptions::default())?;
    residual_norm(model, state.z(), state.b(), &d.dz, &d.db)
}

/// `|dz B z^dag + z dB z^dag + z B dz^dag - L(z B z^dag)|_F` from
/// `dim x k` blocks only.
///
/// With `Y = -i H_eff z B`, `Q = dz B + z dB / 2 - Y` and `G_k = J_k z` the
/// difference is `U W^dag` for `U = [Q, z, G_1 B, ...]` and
/// `W = [z, Q, -G_1, ...]`; its norm is `|W A^dag|_F` with `A = Q_U^dag U`
/// for an orthonormal basis `Q_U` of the range of `U`.
pub fn residual_norm(model: &LindbladModel, z: &CMat, b: &CMat, dz: &CMat, db: &CMat) -> Result<f64> {
    let y = model.effective_hamiltonian().apply(&z.dot(b))?.mapv(|v| -I * v);
    let q = dz.dot(b) + z.dot(db).mapv(|v| v * 0.5) - y;
    let mut us = vec![q.clone(), z.clone()];
    let mut ws = vec![z.clone(), q];
    for jump in model.jumps() {
        let g = jump.apply(z)?;
        us.push(g.dot(b));
        ws.push(g.mapv(|v| -v));
    }
    let uv: Vec<_> = us.iter().map(|a| a.view()).collect();
    let wv: Vec<_> = ws.iter().map(|a| a.view()).collect();
    let u = concatenate(Axis(1), &uv).expect("equal heights");
    let w = concatenate(Axis(1), &wv).expect("equal heights");
    let (qu, _) = orthonormal_factor(&u.view(), 1e-13);
    if qu.ncols() == 0 {
        return Ok(0.0);
    }
    let a = adjoint_dot(&qu, &u);
    Ok(frobenius_norm(&w.dot(&adjoint(&a.view())).view()))
}

/// `p_M / p_1` over all `M` eigenvalues of `rho` within the basis (zero for
/// `M = 1`).
pub fn chi_probability_ratio(state: &LowRankState) -> Result<f64> {
    let m = state.rank();
    if m == 1 {
        return Ok(0.0);
    }
    let (p, _) = state.span_eigen()?;
    let top = p.first().copied().unwrap_or(0.0).max(0.0);
    if top == 0.0 || p.len() < m {
        return Ok(0.0);
    }
    Ok(p[m - 1].max(0.0) / top)
}

/// New unit column for inflation, orthogonal to `span(z)`.
fn new_direction(state: &LowRankState, model: &LindbladModel, rule: InflationRule, rng: &mut SimRng) -> Result<Array1<C64>> {
    let q = orthonormalize(&state.z().view());
    if q.ncols() >= state.dim() {
        return Err(Error::InvalidArgument("basis already spans the whole space".into()));
    }
    let random = |rng: &mut SimRng| {
        random_orthogonal_vector(rng, &q).ok_or_else(|| Error::InvalidArgument("no orthogonal direction left".into()))
    };
    if rule == InflationRule::RandomOrthogonal {
        return random(rng);
    }
    let lt = fresh_ltilde(state, model)?;
    let mut r = lt.clone();
    for _ in 0..2 {
        let c = adjoint_dot(&q, &r);
        r = r - q.dot(&c);
    }
    let scale = frobenius_norm(&lt.view()).max(1.0);
    let rr = hermitian_part(&adjoint_dot(&r, &r).view());
    let eig = hermitian_eigen(&rr.view())?;
    if eig.values[0] <= (1e-12 * scale).powi(2) {
        return random(rng);
    }
    let mut u = r.dot(&eig.vectors.column(0));
    for _ in 0..2 {
        let c = q.t().mapv(|v| v.conj()).dot(&u);
        u = u - q.dot(&c);
    }
    let nrm = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if nrm <= 1e-12 * scale {
        return random(rng);
    }
    Ok(u.mapv(|v| v / nrm))
}

/// Appends one column with zero population; `rho` is unchanged.
pub fn inflate(state: &LowRankState, model: &LindbladModel, rule: InflationRule, rng: &mut SimRng) -> Result<LowRankState> {
    let u = new_direction(state, model, rule, rng)?;
    let (n, m) = state.z().dim();
    let mut z = Array2::zeros((n, m + 1));
    z.slice_mut(s![.., ..m]).assign(state.z());
    z.column_mut(m).assign(&u);
    let mut b = Array2::zeros((m + 1, m + 1));
    b.slice_mut(s![..m, ..m]).assign(state.b());
    LowRankState::new(z, b, *state.pinv_config())
}

/// Drops the weakest spectral component. Returns the new state (trace
/// renormalized to one) and the discarded probability.
pub fn deflate(state: &LowRankState, rng: &mut SimRng) -> Result<(LowRankState, f64)> {
    let m = state.rank();
    if m < 2 {
        return Err(Error::InvalidArgument("cannot deflate a rank-1 state".into()));
    }
    let keep = m - 1;
    let (p, eta) = state.span_eigen()?;
    let p = p.mapv(|v| v.max(0.0));
    let k = p.len().min(keep);
    let mut z = Array2::zeros((state.dim(), keep));
    z.slice_mut(s![.., ..k]).assign(&eta.slice(s![.., ..k]));
    for j in k..keep {
        let basis = z.slice(s![.., ..j]).to_owned();
        let v = random_orthogonal_vector(rng, &basis)
            .ok_or_else(|| Error::InvalidArgument("cannot complete deflated basis".into()))?;
        z.column_mut(j).assign(&v);
    }
    let kept: f64 = p.iter().take(k).sum();
    if kept <= 0.0 {
        return Err(Error::InvalidArgument("deflation would discard all probability".into()));
    }
    let mut b = Array2::from_elem((keep, keep), ZERO);
    for j in 0..k {
        b[[j, j]] = C64::new(p[j] / kept, 0.0);
    }
    let discarded: f64 = p.iter().skip(k).sum();
    Ok((LowRankState::new(z, b, *state.pinv_config())?, discarded))
}

/// Integration under rank supervision.
pub fn supervise(
    state: LowRankState,
    model: &LindbladModel,
    cfg: &SolverConfig,
    policy: RankPolicy,
    observables: &[Box<dyn Observable>],
    seed: u64,
) -> Outcome {
    Evolution::new(model, cfg.clone())
        .with_policy(policy)
        .with_observables(observables)
        .with_seed(seed)
        .run(state)
}
