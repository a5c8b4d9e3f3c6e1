//! Two-photon-stabilized cat qubits driven through Z, ZZ and ZZZ gates.

use std::f64::consts::PI;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{local_annihilate, tensor_embed, FockSpec, SparseOperator};
use crate::lindblad::LindbladModel;
use crate::numerics::{PinvConfig, C64};
use crate::observables::{Expect, Observable};
use crate::state::LowRankState;

use super::{gram_schmidt, leading_population, product_basis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatGate {
    Z,
    Zz,
    Zzz,
}

impl CatGate {
    pub fn arity(self) -> usize {
        match self {
            CatGate::Z => 1,
            CatGate::Zz => 2,
            CatGate::Zzz => 3,
        }
    }
}

/// Starting logical state of every mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatInit {
    /// Even cat, used for phase-flip errors.
    #[default]
    Plus,
    /// `(|C+> + |C->)/sqrt 2`, close to `|alpha>`, used for bit flips.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatParams {
    pub gate: CatGate,
    pub alpha: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gate_time: f64,
    pub cutoff: Option<usize>,
    pub m_pm: usize,
    pub q_max: Option<usize>,
    pub init: CatInit,
}

impl Default for CatParams {
    fn default() -> Self {
        Self::from_drive(CatGate::Z, 2.0, 0.05)
    }
}

impl CatParams {
    /// Gate time chosen so that a drive of strength `eps` completes the
    /// rotation: `T = pi / (4 alpha^N eps)`.
    pub fn from_drive(gate: CatGate, alpha: f64, eps: f64) -> Self {
        Self {
            gate,
            alpha,
            kappa1: 1e-3,
            kappa2: 1.0,
            gate_time: PI / (4.0 * alpha.powi(gate.arity() as i32) * eps),
            cutoff: None,
            m_pm: 3,
            q_max: None,
            init: CatInit::Plus,
        }
    }

    pub fn modes(&self) -> usize {
        self.gate.arity()
    }

    /// `pi / (4 alpha^N T)`.
    pub fn drive(&self) -> f64 {
        PI / (4.0 * self.alpha.powi(self.modes() as i32) * self.gate_time)
    }

    /// `max(20, ceil(4.5 alpha^2))`.
    pub fn default_cutoff(&self) -> usize {
        ((4.5 * self.alpha * self.alpha - 1e-9).ceil() as usize).max(20)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff.unwrap_or_else(|| self.default_cutoff())
    }

    pub fn fock(&self) -> Result<FockSpec> {
        FockSpec::new(self.modes(), self.cutoff())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0) || !(self.gate_time > 0.0) {
            return bad("alpha and gate_time must be positive".into());
        }
        if !(self.kappa1 >= 0.0 && self.kappa2 >= 0.0) {
            return bad("loss rates must be non-negative".into());
        }
        if self.m_pm == 0 || self.m_pm > self.cutoff() {
            return bad(format!("m_pm must lie in 1..={}", self.cutoff()));
        }
        Ok(())
    }
}

/// `I_q(x)` for integer `q` from its ascending series.
pub fn bessel_i(q: i64, x: f64) -> f64 {
    let q = q.unsigned_abs() as usize;
    let h = 0.5 * x;
    let mut term = (0..q).fold(1.0, |acc, k| acc * h / (k + 1) as f64);
    let mut sum = term;
    for k in 0.. {
        term *= h * h / ((k + 1) as f64 * (k + 1 + q) as f64);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `ln n!!` with `(-1)!! = 0!! = 1`.
pub fn ln_double_factorial(n: i64) -> f64 {
    let mut acc = 0.0;
    let mut k = n;
    while k > 1 {
        acc += (k as f64).ln();
        k -= 2;
    }
    acc
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Single-mode operators spanning the left kernel of the two-photon
/// dissipator.
#[derive(Debug, Clone)]
pub struct CatKernel {
    pub jpp: SparseOperator,
    pub jmm: SparseOperator,
    pub jpm: SparseOperator,
    pub jmp: SparseOperator,
    /// Largest `|q|` included.
    pub q_used: usize,
    /// `|a_q| / |a_0|` at `q_used`.
    pub remainder: f64,
}

impl CatKernel {
    /// Hermitian approximation of `sgn(x)`.
    pub fn sign(&self) -> SparseOperator {
        &self.jpm + &self.jmp
    }
}

fn series_weight(q: i64, x: f64) -> f64 {
    let s = if q % 2 == 0 { 1.0 } else { -1.0 };
    s * bessel_i(q, x) / (2 * q + 1) as f64
}

/// Builds the kernel operators on `cutoff` Fock states. Terms with
/// `2|q| + 1 > cutoff` vanish identically there, so `q_max = None` sums
/// the series exactly for the truncated space.
pub fn cat_kernel_operators(alpha: f64, cutoff: usize, q_max: Option<usize>) -> Result<CatKernel> {
    if cutoff < 2 || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("kernel operators need alpha > 0 and cutoff >= 2".into()));
    }
    let x = alpha * alpha;
    let q_lim = cutoff / 2;
    let q_used = q_max.unwrap_or(q_lim).min(q_lim);
    if q_used == 0 {
        return Err(Error::InvalidArgument("q_max must be at least 1".into()));
    }
    let remainder = series_weight(q_used as i64, x).abs() / series_weight(0, x).abs();
    if q_used < q_lim && remainder > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "kernel series not converged at q_max = {q_used} (relative weight {remainder:.2e})"
        )));
    }
    let norm = (2.0 * x / (2.0 * x).sinh()).sqrt();
    let lf: Vec<f64> = (0..cutoff).map(ln_factorial).collect();
    let mut trip = Vec::new();
    for q in -(q_used as i64)..=(q_used as i64) {
        let w = norm * series_weight(q, x);
        for n in (0..cutoff).step_by(2) {
            let (m, ln_mag) = if q >= 0 {
                let m = n + 2 * q as usize + 1;
                if m >= cutoff {
                    continue;
                }
                let d = ln_double_factorial(n as i64 - 1) - ln_double_factorial(n as i64 + 2 * q);
                (m, d + 0.5 * (lf[m] - lf[n]))
            } else {
                let k = (-q) as usize;
                if n + 1 < 2 * k {
                    continue;
                }
                let m = n + 1 - 2 * k;
                (m, 0.5 * (lf[n] - lf[m]) + ln_double_factorial(m as i64) - ln_double_factorial(n as i64))
            };
            trip.push((n, m, C64::new(w * ln_mag.exp(), 0.0)));
        }
    }
    let jpm = SparseOperator::from_triplets(cutoff, trip)?;
    let parity = |r: usize| SparseOperator::diagonal((0..cutoff).map(|n| C64::new((n % 2 == r) as u8 as f64, 0.0)));
    Ok(CatKernel {
        jpp: parity(0),
        jmm: parity(1),
        jmp: jpm.adjoint(),
        jpm,
        q_used,
        remainder,
    })
}

/// Normalized coherent state on `cutoff` number states.
pub fn coherent_state(alpha: f64, cutoff: usize) -> Array1<C64> {
    let mut v = Array1::zeros(cutoff);
    let mut c = 1.0;
    for n in 0..cutoff {
        v[n] = C64::new(c, 0.0);
        c *= alpha / ((n + 1) as f64).sqrt();
    }
    normalized(v)
}

fn normalized(v: Array1<C64>) -> Array1<C64> {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|x| x / n)
}

/// `(|C+>, |C->)`, the normalized even and odd cats.
pub fn cat_states(alpha: f64, cutoff: usize) -> (Array1<C64>, Array1<C64>) {
    let a = coherent_state(alpha, cutoff);
    let b = coherent_state(-alpha, cutoff);
    (normalized(&a + &b), normalized(&a - &b))
}

/// Mode-local basis: the initial state, then `|+-alpha>` and their
/// successive photon additions, orthonormalized.
pub fn mode_basis(p: &CatParams) -> Result<ndarray::Array2<C64>> {
    let c = p.cutoff();
    let (plus, minus) = cat_states(p.alpha, c);
    let init = match p.init {
        CatInit::Plus => plus,
        CatInit::Zero => normalized(&plus + &minus),
    };
    let ad = local_annihilate(c).adjoint();
    let mut cands = vec![init];
    let mut pair = [coherent_state(p.alpha, c), coherent_state(-p.alpha, c)];
    for _ in 0..c {
        cands.extend(pair.iter().cloned());
        for v in pair.iter_mut() {
            let col = v.clone().into_shape_with_order((c, 1)).expect("column");
            *v = ad.apply(&col)?.column(0).to_owned();
        }
    }
    gram_schmidt(&cands, p.m_pm)
}

pub fn hamiltonian(p: &CatParams, fock: &FockSpec) -> Result<SparseOperator> {
    let a1 = local_annihilate(fock.cutoff);
    let dims = fock.local_dims();
    let a = |j: usize| tensor_embed(&dims, &[(j, &a1)]);
    let term = match p.gate {
        CatGate::Z => a(0)?,
        CatGate::Zz => a(0)?.matmul(&a(1)?.adjoint())?,
        CatGate::Zzz => a(0)?.matmul(&a(1)?)?.matmul(&a(2)?.adjoint())?,
    };
    Ok((&term + &term.adjoint()).scaled(C64::new(p.drive(), 0.0)))
}

pub fn build_cat_gate(p: &CatParams) -> Result<(LindbladModel, LowRankState)> {
    p.validate()?;
    let fock = p.fock()?;
    let h = hamiltonian(p, &fock)?;
    let dims = fock.local_dims();
    let a1 = local_annihilate(fock.cutoff);
    let x = p.alpha * p.alpha;
    let two_photon = &a1.matmul(&a1)? - &SparseOperator::identity(fock.cutoff).scaled(C64::new(x, 0.0));
    let mut jumps = Vec::new();
    for j in 0..fock.modes {
        jumps.push(tensor_embed(&dims, &[(j, &two_photon.scaled(C64::new(p.kappa2.sqrt(), 0.0)))])?);
        if p.kappa1 > 0.0 {
            jumps.push(tensor_embed(&dims, &[(j, &a1.scaled(C64::new(p.kappa1.sqrt(), 0.0)))])?);
        }
    }
    let model = LindbladModel::new(h, jumps)?;
    let local = mode_basis(p)?;
    let z = product_basis(&vec![local; fock.modes]);
    let m = z.ncols();
    Ok((model, LowRankState::new(z, leading_population(m), PinvConfig::default())?))
}

/// `P_Z = <J_++ (x) ...>` and `P_X = 1 - <sgn (x) ...>`.
pub fn gate_error_observables(p: &CatParams) -> Result<Vec<Box<dyn Observable>>> {
    let fock = p.fock()?;
    let k = cat_kernel_operators(p.alpha, fock.cutoff, p.q_max)?;
    let dims = fock.local_dims();
    let sign = k.sign();
    let all = |op: &SparseOperator| -> Result<SparseOperator> {
        let ops: Vec<(usize, &SparseOperator)> = (0..fock.modes).map(|j| (j, op)).collect();
        tensor_embed(&dims, &ops)
    };
    Ok(vec![
        Box::new(Expect::new("P_Z", all(&k.jpp)?)),
        Box::new(Expect::affine("P_X", all(&sign)?, -1.0, 1.0)),
    ])
}

/// `kappa1 T alpha^2 + eps^2 T / alpha^2`.
pub fn phase_flip_estimate(p: &CatParams) -> f64 {
    let x = p.alpha * p.alpha;
    p.kappa1 * p.gate_time * x + p.drive().powi(2) * p.gate_time / x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs_diff, CMat};
    use crate::oracle::integrate_dense;
    use crate::tdvp::SolverConfig;

    fn inner(a: &Array1<C64>, op: &SparseOperator, b: &Array1<C64>) -> C64 {
        let col = b.clone().into_shape_with_order((b.len(), 1)).unwrap();
        let ob = op.apply(&col).unwrap();
        a.iter().zip(ob.column(0).iter()).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn gate_time_from_drive() {
        let p = CatParams::from_drive(CatGate::Z, 2.0, 1.0 / 20.0);
        assert!((p.gate_time - 2.5 * PI).abs() < 1e-12);
        assert!((p.drive() - 0.05).abs() < 1e-15);
        assert_eq!(p.default_cutoff(), 20);
        assert_eq!(CatParams::from_drive(CatGate::Z, 8f64.sqrt(), 0.05).default_cutoff(), 36);
    }

    #[test]
    fn special_functions() {
        assert!((bessel_i(0, 1.0) - 1.2660658777520084).abs() < 1e-15);
        assert!((bessel_i(-1, 1.0) - 0.565159103992485).abs() < 1e-15);
        assert!((bessel_i(3, 2.5) - 0.4743704087780359).abs() < 1e-15);
        assert!((bessel_i(0, 8.0) / 427.5641157218046 - 1.0).abs() < 1e-14);
        assert!((bessel_i(12, 8.0) / 0.11419627096814522 - 1.0).abs() < 1e-14);
        assert!((ln_double_factorial(7) - 105f64.ln()).abs() < 1e-14);
        assert!((ln_double_factorial(8) - 384f64.ln()).abs() < 1e-14);
        assert_eq!(ln_double_factorial(-1), 0.0);
        assert_eq!(ln_double_factorial(0), 0.0);
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        for gate in [CatGate::Z, CatGate::Zz, CatGate::Zzz] {
            let p = CatParams {
                cutoff: Some(6),
                m_pm: 2,
                ..CatParams::from_drive(gate, 1.5, 0.05)
            };
            let (model, st) = build_cat_gate(&p).unwrap();
            assert!(model.hamiltonian().is_hermitian(1e-14));
            assert_eq!(st.rank(), 2usize.pow(gate.arity() as u32));
            assert_eq!(model.dim(), 6usize.pow(gate.arity() as u32));
        }
    }

    #[test]
    fn parity_and_biorthogonality() {
        let (alpha, c) = (2.0, 40);
        let k = cat_kernel_operators(alpha, c, None).unwrap();
        let (plus, minus) = cat_states(alpha, c);
        assert!((inner(&plus, &k.jpp, &plus).re - 1.0).abs() < 1e-14);
        assert!(inner(&minus, &k.jpp, &minus).norm() < 1e-14);
        let sum = &k.jpp + &k.jmm;
        assert!(max_abs_diff(&sum.to_dense(), &SparseOperator::identity(c).to_dense()) == 0.0);
        let b = inner(&plus, &k.jpm, &minus);
        assert!((b - C64::new(1.0, 0.0)).norm() < 1e-8, "{b}");
        assert!(inner(&minus, &k.jpm, &plus).norm() < 1e-14);
        // logical zero sits at sgn = +1
        let zero = normalized(&plus + &minus);
        assert!((inner(&zero, &k.sign(), &zero).re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(cat_kernel_operators(2.0, 40, Some(2)).is_err());
        let k = cat_kernel_operators(1.0, 40, Some(15)).unwrap();
        assert!(k.remainder < 1e-8);
    }

    #[test]
    fn cats_are_stationary_without_drive() {
        let p = CatParams {
            kappa1: 0.0,
            gate_time: 1e12,
            cutoff: Some(30),
            ..CatParams::from_drive(CatGate::Z, 2f64.sqrt(), 0.05)
        };
        let (model, _) = build_cat_gate(&p).unwrap();
        let (plus, minus) = cat_states(p.alpha, 30);
        for v in [plus, minus] {
            let rho: CMat = ndarray::Array2::from_shape_fn((30, 30), |(i, j)| v[i] * v[j].conj());
            let l = model.apply_liouvillian_dense(&rho).unwrap();
            // only the tiny drive left over from the huge gate time
            assert!(l.iter().all(|x| x.norm() < 1e-10));
        }
    }

    #[test]
    fn ideal_rotation_flips_phase() {
        let p = CatParams {
            kappa1: 0.0,
            ..CatParams::from_drive(CatGate::Z, 2f64.sqrt(), 0.05)
        };
        let (model, st) = build_cat_gate(&p).unwrap();
        let obs = gate_error_observables(&p).unwrap();
        let cfg = SolverConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            t1: p.gate_time,
            ..Default::default()
        };
        let run = integrate_dense(&st.reconstruct_dense().unwrap(), &model, &cfg, &obs, false).unwrap();
        let pz0 = run.record.samples[0].values[0].unwrap();
        let pz = run.record.final_value("P_Z").unwrap();
        assert!((pz0 - 1.0).abs() < 1e-12);
        let scale = phase_flip_estimate(&p);
        assert!(pz < 2.0 * scale && pz > 0.25 * scale, "{pz} vs {scale}");
    }
}
