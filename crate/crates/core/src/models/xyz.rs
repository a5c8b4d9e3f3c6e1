//! Dissipative Heisenberg XYZ lattice with spin decay, and its
//! transverse-field Ising limit.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{grid_edges, pauli_site, sum_ops, LatticeSpec, Pauli, SparseOperator};
use crate::lindblad::LindbladModel;
use crate::numerics::{PinvConfig, C64};
use crate::observables::{Expect, Observable, SqrtExpect};
use crate::rank::RankPolicy;
use crate::state::LowRankState;

use super::leading_population;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XyzParams {
    pub lx: usize,
    pub ly: usize,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub hz: f64,
    pub hx: f64,
    pub gamma: f64,
    /// Size of the starting basis; `None` means one more than the number
    /// of sites.
    pub initial_rank: Option<usize>,
}

impl Default for XyzParams {
    fn default() -> Self {
        Self {
            lx: 2,
            ly: 2,
            jx: 0.9,
            jy: 1.0,
            jz: 1.0,
            hz: 0.0,
            hx: 0.0,
            gamma: 1.0,
            initial_rank: None,
        }
    }
}

impl XyzParams {
    /// Transverse-field Ising chain settings used for the rank-trace study.
    pub fn tfim(lx: usize, ly: usize, hx: f64) -> Self {
        Self {
            lx,
            ly,
            jx: 0.0,
            jy: 0.0,
            jz: 1.0,
            hz: 0.0,
            hx,
            gamma: 1.0,
            initial_rank: Some(6),
        }
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.lx, self.ly)
    }

    pub fn sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn initial_rank(&self) -> usize {
        self.initial_rank.unwrap_or(self.sites() + 1)
    }

    /// Default rank control: the starting rank is the floor and
    /// deflation is off.
    pub fn default_policy(&self, eps_max: f64) -> RankPolicy {
        RankPolicy {
            eps_max,
            eps_min: 0.0,
            m_min: self.initial_rank(),
            m_max: 64.min(1 << self.sites()),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.lattice()?;
        if l.sites() > 14 {
            return Err(Error::InvalidArgument(format!("{} sites exceed the supported 14", l.sites())));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("decay rate must be non-negative".into()));
        }
        let m = self.initial_rank();
        if m == 0 || m > l.hilbert_dim() {
            return Err(Error::InvalidArgument(format!("initial rank {m} outside 1..={}", l.hilbert_dim())));
        }
        Ok(())
    }
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn hamiltonian(p: &XyzParams) -> Result<SparseOperator> {
    p.validate()?;
    let l = p.lattice()?;
    let dim = l.hilbert_dim();
    let site = |s, w| pauli_site(&l, s, w);
    let mut terms = Vec::new();
    for (i, j) in grid_edges(&l) {
        for (w, c) in [(Pauli::X, p.jx), (Pauli::Y, p.jy), (Pauli::Z, p.jz)] {
            if c != 0.0 {
                terms.push(site(i, w)?.matmul(&site(j, w)?)?.scaled(real(c)));
            }
        }
    }
    for s in 0..l.sites() {
        if p.hz != 0.0 {
            terms.push(site(s, Pauli::Z)?.scaled(real(p.hz)));
        }
        if p.hx != 0.0 {
            terms.push(site(s, Pauli::X)?.scaled(real(p.hx)));
        }
    }
    Ok(sum_ops(dim, terms.iter()))
}

/// Index of the computational state; `down[s]` flips site `s` to down.
/// Site 0 is the most significant digit and up is digit 0.
fn basis_index(down: &[bool]) -> usize {
    down.iter().fold(0, |acc, &d| 2 * acc + d as usize)
}

/// The first `count` computational states ordered by Hamming distance
/// from all-down, then lexicographically by flipped sites.
pub fn hamming_basis(sites: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count && k <= sites {
        let mut pick: Vec<usize> = (0..k).collect();
        loop {
            let mut down = vec![true; sites];
            for &s in &pick {
                down[s] = false;
            }
            out.push(basis_index(&down));
            if out.len() == count {
                break;
            }
            // next k-combination
            let mut i = k;
            while i > 0 && pick[i - 1] == sites - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            pick[i - 1] += 1;
            for j in i..k {
                pick[j] = pick[j - 1] + 1;
            }
        }
        k += 1;
    }
    out
}

/// Model plus the pure all-down state expressed in the Hamming basis.
pub fn build_xyz(p: &XyzParams) -> Result<(LindbladModel, LowRankState)> {
    let h = hamiltonian(p)?;
    let l = p.lattice()?;
    let rate = real(p.gamma.sqrt());
    let jumps = (0..l.sites())
        .map(|s| Ok(pauli_site(&l, s, Pauli::Minus)?.scaled(rate)))
        .collect::<Result<Vec<_>>>()?;
    let model = LindbladModel::new(h, jumps)?;
    let m = p.initial_rank();
    let mut z = Array2::zeros((l.hilbert_dim(), m));
    for (j, idx) in hamming_basis(l.sites(), m).into_iter().enumerate() {
        z[[idx, j]] = real(1.0);
    }
    let state = LowRankState::new(z, leading_population(m), PinvConfig::default())?;
    Ok((model, state))
}

/// All-down product vector.
pub fn all_down(sites: usize) -> Array1<C64> {
    let mut v = Array1::zeros(1 << sites);
    v[(1 << sites) - 1] = real(1.0);
    v
}

pub struct SpinOperators {
    /// `(1/N) sum_j s^y_j`
    pub my: SparseOperator,
    /// `(1/N^2) sum_ij s^y_i s^y_j`
    pub my_sq: SparseOperator,
    /// `1/(N(N-1)) sum_{i != j} s^x_i s^x_j`
    pub sxx: SparseOperator,
    /// `(1/N) sum_j s^z_j`
    pub mz: SparseOperator,
}

pub fn spin_operators(lattice: &LatticeSpec) -> Result<SpinOperators> {
    let n = lattice.sites();
    let dim = lattice.hilbert_dim();
    let total = |w| -> Result<SparseOperator> {
        let ops = (0..n).map(|s| pauli_site(lattice, s, w)).collect::<Result<Vec<_>>>()?;
        Ok(sum_ops(dim, ops.iter()))
    };
    let (sx, sy, sz) = (total(Pauli::X)?, total(Pauli::Y)?, total(Pauli::Z)?);
    let nf = n as f64;
    let my_sq = sy.matmul(&sy)?.scaled(real(1.0 / (nf * nf)));
    let sxx = if n > 1 {
        (&sx.matmul(&sx)? - &SparseOperator::identity(dim).scaled(real(nf))).scaled(real(1.0 / (nf * (nf - 1.0))))
    } else {
        SparseOperator::zeros(dim)
    };
    Ok(SpinOperators {
        my: sy.scaled(real(1.0 / nf)),
        my_sq,
        sxx,
        mz: sz.scaled(real(1.0 / nf)),
    })
}

/// `M_y`, `dM_y`, `S_xx`, `M_z` in that order.
pub fn xyz_observables(lattice: &LatticeSpec) -> Result<Vec<Box<dyn Observable>>> {
    let ops = spin_operators(lattice)?;
    Ok(vec![
        Box::new(Expect::new("M_y", ops.my)),
        Box::new(SqrtExpect {
            name: "dM_y".into(),
            op: ops.my_sq,
        }),
        Box::new(Expect::new("S_xx", ops.sxx)),
        Box::new(Expect::new("M_z", ops.mz)),
    ])
}
