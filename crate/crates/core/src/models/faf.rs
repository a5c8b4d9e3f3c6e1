//! Coupled nonlinear cavities with two-photon drive and one- and
//! two-photon losses (frustrated antiferromagnetic regime for negative
//! hopping).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{boson_annihilate, sum_ops, FockSpec, SparseOperator};
use crate::lindblad::LindbladModel;
use crate::numerics::{PinvConfig, C64};
use crate::observables::{Expect, Observable, Ratio};
use crate::state::LowRankState;

use super::{leading_population, product_basis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FafParams {
    pub modes: usize,
    pub detuning: f64,
    pub kerr: f64,
    /// Two-photon drive amplitude and phase.
    pub drive: f64,
    pub drive_phase: f64,
    pub hopping: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Fock states kept per mode; `None` applies the default rule.
    pub cutoff: Option<usize>,
    /// Basis states per mode.
    pub m_pm: usize,
}

impl Default for FafParams {
    fn default() -> Self {
        Self {
            modes: 2,
            detuning: -10.0,
            kerr: 10.0,
            drive: 0.0,
            drive_phase: 0.0,
            hopping: -10.0,
            gamma: 1.0,
            eta: 1.0,
            cutoff: None,
            m_pm: 2,
        }
    }
}

impl FafParams {
    /// `5 G / W` with `W = sqrt(U^2 + eta^2)`, the mean photon number scale.
    fn photon_scale(&self) -> f64 {
        5.0 * self.drive.abs() / self.kerr.hypot(self.eta)
    }

    /// `max(10, ceil(5 G / W))`.
    pub fn default_cutoff(&self) -> usize {
        (self.photon_scale().ceil() as usize).max(10)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff.unwrap_or_else(|| self.default_cutoff())
    }

    pub fn fock(&self) -> Result<FockSpec> {
        FockSpec::new(self.modes, self.cutoff())
    }

    pub fn rank(&self) -> usize {
        self.m_pm.pow(self.modes as u32)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(2..=3).contains(&self.modes) {
            return bad(format!("cavity count must be 2 or 3, got {}", self.modes));
        }
        if !(self.gamma >= 0.0 && self.eta >= 0.0) {
            return bad("loss rates must be non-negative".into());
        }
        let c = self.cutoff();
        if (c as f64) < self.photon_scale() {
            return bad(format!("cutoff {c} too small for drive {} (needs {:.1})", self.drive, self.photon_scale()));
        }
        if self.m_pm == 0 || self.m_pm > c {
            return bad(format!("m_pm must lie in 1..={c}"));
        }
        Ok(())
    }
}

pub struct CavityOperators {
    pub fock: FockSpec,
    pub annihilate: Vec<SparseOperator>,
}

impl CavityOperators {
    pub fn new(fock: FockSpec) -> Result<Self> {
        let annihilate = (0..fock.modes).map(|j| boson_annihilate(&fock, j)).collect::<Result<Vec<_>>>()?;
        Ok(Self { fock, annihilate })
    }

    pub fn number(&self, j: usize) -> Result<SparseOperator> {
        self.annihilate[j].adjoint().matmul(&self.annihilate[j])
    }

    /// `a_i^dag a_j`.
    pub fn hop(&self, i: usize, j: usize) -> Result<SparseOperator> {
        self.annihilate[i].adjoint().matmul(&self.annihilate[j])
    }
}

pub fn hamiltonian(p: &FafParams, ops: &CavityOperators) -> Result<SparseOperator> {
    let dim = ops.fock.hilbert_dim();
    let g = C64::from_polar(p.drive, p.drive_phase);
    let mut terms = Vec::new();
    for j in 0..p.modes {
        let a = &ops.annihilate[j];
        let ad = a.adjoint();
        let a2 = a.matmul(a)?;
        let ad2 = a2.adjoint();
        terms.push(ops.number(j)?.scaled(C64::new(-p.detuning, 0.0)));
        terms.push(ad2.matmul(&a2)?.scaled(C64::new(0.5 * p.kerr, 0.0)));
        terms.push(ad2.scaled(0.5 * g));
        terms.push(a2.scaled(0.5 * g.conj()));
        for k in 0..p.modes {
            if k != j {
                let h = &ad.matmul(&ops.annihilate[k])? + &ops.hop(k, j)?;
                terms.push(h.scaled(C64::new(-0.5 * p.hopping, 0.0)));
            }
        }
    }
    Ok(sum_ops(dim, terms.iter()))
}

/// Model and the vacuum, with a product basis of the lowest `m_pm` Fock
/// states per mode.
pub fn build_faf(p: &FafParams) -> Result<(LindbladModel, LowRankState)> {
    p.validate()?;
    let ops = CavityOperators::new(p.fock()?)?;
    let h = hamiltonian(p, &ops)?;
    let mut jumps = Vec::new();
    for a in &ops.annihilate {
        jumps.push(a.scaled(C64::new(p.gamma.sqrt(), 0.0)));
    }
    for a in &ops.annihilate {
        jumps.push(a.matmul(a)?.scaled(C64::new(p.eta.sqrt(), 0.0)));
    }
    let model = LindbladModel::new(h, jumps)?;
    let c = p.cutoff();
    let ladder = Array2::from_shape_fn((c, p.m_pm), |(i, j)| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let z = product_basis(&vec![ladder; p.modes]);
    let state = LowRankState::new(z, leading_population(p.rank()), PinvConfig::default())?;
    Ok((model, state))
}

/// `Re <a_i^dag a_j> / <a_i^dag a_i>`, undefined below 1e-10 photons.
pub fn g1_observable(ops: &CavityOperators, i: usize, j: usize) -> Result<Ratio> {
    let m = ops.fock.modes;
    if i >= m || j >= m {
        return Err(Error::IndexOutOfRange {
            what: "mode",
            index: i.max(j),
            size: m,
        });
    }
    Ok(Ratio {
        name: format!("g1_{}{}", i + 1, j + 1),
        numerator: ops.hop(i, j)?,
        denominator: ops.number(i)?,
        min_denominator: 1e-10,
    })
}

/// `g1_12` followed by the photon number of each mode.
pub fn faf_observables(p: &FafParams) -> Result<Vec<Box<dyn Observable>>> {
    let ops = CavityOperators::new(p.fock()?)?;
    let mut out: Vec<Box<dyn Observable>> = vec![Box::new(g1_observable(&ops, 0, 1)?)];
    for j in 0..p.modes {
        out.push(Box::new(Expect::new(format!("n_{}", j + 1), ops.number(j)?)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::trace;
    use crate::random::{random_density, rng};
    use crate::state::Expectation;
    use ndarray::Array1;

    fn coherent(alpha: f64, cutoff: usize) -> Array1<C64> {
        let mut v = Array1::zeros(cutoff);
        let mut c = (-alpha * alpha / 2.0).exp();
        for n in 0..cutoff {
            v[n] = C64::new(c, 0.0);
            c *= alpha / ((n + 1) as f64).sqrt();
        }
        v
    }

    #[test]
    fn cutoff_rule() {
        let p = FafParams {
            drive: 30.0,
            ..Default::default()
        };
        assert_eq!(p.default_cutoff(), 15);
        assert_eq!(FafParams::default().default_cutoff(), 10);
        let small = FafParams {
            drive: 30.0,
            cutoff: Some(8),
            ..Default::default()
        };
        assert!(build_faf(&small).is_err());
        assert!(build_faf(&FafParams { modes: 4, ..Default::default() }).is_err());
    }

    #[test]
    fn structure_and_vacuum_start() {
        let p = FafParams {
            drive: 5.0,
            ..Default::default()
        };
        let (model, st) = build_faf(&p).unwrap();
        assert_eq!(model.dim(), 100);
        assert_eq!(model.jumps().len(), 4);
        assert!(model.hamiltonian().is_hermitian(1e-12));
        assert_eq!(st.rank(), 4);
        assert_eq!(st.reconstruct_dense().unwrap()[[0, 0]].re, 1.0);
        let mut r = rng(1);
        let small = FafParams {
            drive: 1.0,
            cutoff: Some(4),
            ..Default::default()
        };
        let (m, _) = build_faf(&small).unwrap();
        let rho = random_density(&mut r, 16, 4);
        assert!(trace(&m.apply_liouvillian_dense(&rho).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn undriven_vacuum_is_dark() {
        let (model, st) = build_faf(&FafParams::default()).unwrap();
        let rho = st.reconstruct_dense().unwrap();
        let l = model.apply_liouvillian_dense(&rho).unwrap();
        assert!(l.iter().all(|v| v.norm() < 1e-14));
        let obs = faf_observables(&FafParams::default()).unwrap();
        assert_eq!(obs[0].evaluate(&st).unwrap(), None);
    }

    #[test]
    fn g1_of_opposite_coherent_states() {
        let fock = FockSpec::new(2, 20).unwrap();
        let ops = CavityOperators::new(fock).unwrap();
        let a = coherent(1.3, 20);
        let b = coherent(-1.3, 20);
        let psi: Array1<C64> = Array1::from_iter(a.iter().flat_map(|x| b.iter().map(move |y| x * y)));
        let st = LowRankState::pure(&psi, PinvConfig::default()).unwrap();
        let g = g1_observable(&ops, 0, 1).unwrap();
        let v = crate::observables::Observable::evaluate(&g, &st).unwrap().unwrap();
        assert!((v + 1.0).abs() < 1e-10);
        assert!((st.expect(&ops.number(0).unwrap()).unwrap().re - 1.69).abs() < 1e-8);
    }
}
