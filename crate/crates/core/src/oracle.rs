//! Dense reference integration of the full master equation.

use ndarray::Array2;

use crate::error::{dim_mismatch, Error, Result};
use crate::lindblad::LindbladModel;
use crate::numerics::{frobenius_norm, hermitian_eigen, hermitian_part, trace, CMat, C64};
use crate::observables::{evaluate_all, Observable};
use crate::ode::{solve, StepStats};
use crate::record::{OutputSample, RunRecord};
use crate::state::{entropy_of, DENSE_LIMIT, NULL_CUTOFF};
use crate::tdvp::SolverConfig;

/// Above this dimension entropy and rank columns are left as NaN / dim,
/// since they need a full dense eigendecomposition.
pub const SPECTRAL_LIMIT: usize = 256;

#[derive(Debug, Clone)]
pub struct DenseRun {
    pub record: RunRecord,
    /// `(t, rho)` at every output time when requested.
    pub states: Vec<(f64, CMat)>,
    pub final_state: CMat,
    pub stats: StepStats,
}

fn pack_dense(rho: &CMat) -> Vec<f64> {
    rho.iter().map(|v| v.re).chain(rho.iter().map(|v| v.im)).collect()
}

fn unpack_dense(y: &[f64], n: usize) -> CMat {
    let nn = n * n;
    Array2::from_shape_fn((n, n), |(i, j)| C64::new(y[i * n + j], y[nn + i * n + j]))
}

fn check_dims(rho: &CMat, model: &LindbladModel) -> Result<usize> {
    let n = model.dim();
    if n > DENSE_LIMIT {
        return Err(Error::DenseLimit { dim: n, limit: DENSE_LIMIT });
    }
    if rho.dim() != (n, n) {
        return Err(dim_mismatch("dense initial state", (n, n), rho.dim()));
    }
    Ok(n)
}

fn dense_sample(t: f64, rho: &CMat, obs: &[Box<dyn Observable>]) -> Result<OutputSample> {
    let n = rho.nrows();
    let (entropy, rank) = if n <= SPECTRAL_LIMIT {
        let w = hermitian_eigen(&hermitian_part(&rho.view()).view())?.values;
        let top = w[0].max(0.0);
        let rank = w.iter().filter(|&&v| v > NULL_CUTOFF * top).count();
        (entropy_of(w.iter().copied()), rank)
    } else {
        (f64::NAN, n)
    };
    Ok(OutputSample {
        t,
        rank,
        chi: f64::NAN,
        trace_dev: trace(rho).re - 1.0,
        entropy,
        values: evaluate_all(obs, rho)?,
    })
}

/// Evolves `rho` as a dense matrix with the same adaptive stepper and
/// output schedule as the low-rank engine.
pub fn integrate_dense(
    rho0: &CMat,
    model: &LindbladModel,
    cfg: &SolverConfig,
    observables: &[Box<dyn Observable>],
    keep_states: bool,
) -> Result<DenseRun> {
    cfg.validate()?;
    let n = check_dims(rho0, model)?;
    let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let rho = unpack_dense(y, n);
        let out = model.apply_liouvillian_dense(&rho)?;
        dy.copy_from_slice(&pack_dense(&out));
        Ok(())
    };
    let names = observables.iter().map(|o| o.name().to_string()).collect();
    let mut record = RunRecord::new(names);
    let mut states = Vec::new();
    let outputs = cfg.outputs();
    let (y, stats) = solve(&mut f, cfg.t0, cfg.t1, pack_dense(rho0), cfg.step_control(), &outputs, |t, y| {
        let rho = hermitian_part(&unpack_dense(y, n).view());
        record.samples.push(dense_sample(t, &rho, observables)?);
        if keep_states {
            states.push((t, rho));
        }
        Ok(())
    })?;
    record.diagnostics.rhs_calls = stats.rhs_calls;
    record.diagnostics.accepted_steps = stats.accepted;
    record.diagnostics.rejected_steps = stats.rejected;
    record.diagnostics.max_trace_dev = record.samples.iter().map(|s| s.trace_dev.abs()).fold(0.0, f64::max);
    record.diagnostics.peak_rank = record.samples.iter().map(|s| s.rank).max().unwrap_or(n);
    Ok(DenseRun {
        record,
        states,
        final_state: hermitian_part(&unpack_dense(&y, n).view()),
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: CMat,
    /// `|L(rho)|_F` at the returned iterate.
    pub residual: f64,
    pub t: f64,
    pub converged: bool,
}

/// Integrates in chunks of length `cfg.t1 - cfg.t0` until the Liouvillian
/// residual drops below `residual_tol` or `max_time` is reached; the last
/// iterate is returned either way.
pub fn steady_state_by_integration(
    model: &LindbladModel,
    rho0: &CMat,
    cfg: &SolverConfig,
    residual_tol: f64,
    max_time: f64,
) -> Result<SteadyState> {
    check_dims(rho0, model)?;
    let chunk = cfg.t1 - cfg.t0;
    let mut rho = rho0.clone();
    let mut t = cfg.t0;
    loop {
        let residual = frobenius_norm(&model.apply_liouvillian_dense(&rho)?.view());
        if residual <= residual_tol || t >= max_time {
            return Ok(SteadyState {
                rho,
                residual,
                t,
                converged: residual <= residual_tol,
            });
        }
        let c = SolverConfig {
            t0: t,
            t1: (t + chunk).min(max_time.max(t + 1e-12)),
            output_times: Vec::new(),
            ..cfg.clone()
        };
        rho = integrate_dense(&rho, model, &c, &[], false)?.final_state;
        t = c.t1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{pauli_site, LatticeSpec, Pauli, SparseOperator};
    use crate::numerics::{ONE, ZERO};
    use crate::random::{random_density, rng};
    use ndarray::array;

    fn decay_qubit(gamma: f64) -> LindbladModel {
        let l = LatticeSpec::new(1, 1).unwrap();
        let sm = pauli_site(&l, 0, Pauli::Minus).unwrap();
        LindbladModel::new(SparseOperator::zeros(2), vec![sm.scaled(C64::new(gamma.sqrt(), 0.0))]).unwrap()
    }

    fn tight(t1: f64) -> SolverConfig {
        SolverConfig {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            t1,
            ..Default::default()
        }
    }

    #[test]
    fn qubit_decay_populations() {
        let gamma = 0.8;
        let up = array![[ONE, ZERO], [ZERO, ZERO]];
        let run = integrate_dense(&up, &decay_qubit(gamma), &tight(4.0).with_uniform_outputs(8), &[], true).unwrap();
        for (t, rho) in &run.states {
            assert!((rho[[0, 0]].re - (-gamma * t).exp()).abs() < 1e-8);
        }
        assert_eq!(run.states.len(), 9);
    }

    #[test]
    fn unitary_evolution_keeps_purity() {
        let mut r = rng(3);
        let m = LindbladModel::random(&mut r, 6, 0, 3);
        let rho0 = random_density(&mut r, 6, 1);
        let run = integrate_dense(&rho0, &m, &tight(3.0), &[], false).unwrap();
        let purity: f64 = run.final_state.iter().map(|v| v.norm_sqr()).sum();
        assert!((purity - 1.0).abs() < 1e-8);
        assert!((trace(&run.final_state).re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn steady_state_of_decay() {
        let mixed = array![[C64::new(0.5, 0.0), ZERO], [ZERO, C64::new(0.5, 0.0)]];
        let ss = steady_state_by_integration(&decay_qubit(1.0), &mixed, &tight(5.0), 1e-8, 100.0).unwrap();
        assert!(ss.converged && ss.residual <= 1e-8);
        assert!((ss.rho[[1, 1]].re - 1.0).abs() < 1e-8);
        // not enough time: best iterate is still returned
        let ss = steady_state_by_integration(&decay_qubit(1.0), &mixed, &tight(0.5), 1e-12, 1.0).unwrap();
        assert!(!ss.converged && ss.residual > 1e-12 && ss.t == 1.0);
    }

    #[test]
    fn dense_limit_enforced() {
        let m = LindbladModel::new(SparseOperator::zeros(DENSE_LIMIT + 1), vec![]).unwrap();
        let rho = CMat::zeros((2, 2));
        assert!(matches!(integrate_dense(&rho, &m, &tight(1.0), &[], false), Err(Error::DenseLimit { .. })));
    }
}
