//! Lindblad generators and their action on low-rank and dense states.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::hilbert::{sum_ops, SparseOperator};
use crate::numerics::{adjoint, adjoint_dot, matmul, CMat, C64, I, ONE};
use crate::random::random_complex;

#[derive(Debug, Clone)]
pub struct LindbladModel {
    hamiltonian: SparseOperator,
    jumps: Vec<SparseOperator>,
    h_eff: SparseOperator,
    /// Nonempty output rows of each jump, kept when they are a small
    /// enough subset to be worth gathering.
    jump_rows: Vec<Option<Vec<usize>>>,
}

impl LindbladModel {
    /// Checks Hermiticity of `hamiltonian` and precomputes
    /// `H_eff = H - i/2 sum_k J_k^dag J_k`.
    pub fn new(hamiltonian: SparseOperator, jumps: Vec<SparseOperator>) -> Result<Self> {
        let n = hamiltonian.dim();
        for j in &jumps {
            if j.dim() != n {
                return Err(dim_mismatch("jump operator", n, j.dim()));
            }
        }
        if !hamiltonian.is_hermitian(1e-12) {
            return Err(Error::NotHermitian {
                defect: hamiltonian.hermiticity_defect(),
            });
        }
        let decay: Vec<SparseOperator> = jumps.iter().map(|j| &j.adjoint() * j).collect();
        let decay = sum_ops(n, decay.iter());
        let h_eff = &hamiltonian + &decay.scaled(C64::new(0.0, -0.5));
        let jump_rows = jumps
            .iter()
            .map(|j| {
                let rows: Vec<usize> = (0..n).filter(|&i| j.row(i).next().is_some()).collect();
                (4 * rows.len() <= 3 * n).then_some(rows)
            })
            .collect();
        Ok(Self {
            hamiltonian,
            jumps,
            h_eff,
            jump_rows,
        })
    }

    /// Random model for fuzzing: sparse Hermitian `H` and `n_jumps` sparse
    /// jump operators, each row carrying about `per_row` entries.
    pub fn random<R: Rng>(rng: &mut R, dim: usize, n_jumps: usize, per_row: usize) -> Self {
        let sparse = |rng: &mut R, scale: f64| {
            let mut t = Vec::with_capacity(dim * per_row);
            for i in 0..dim {
                for _ in 0..per_row {
                    t.push((i, rng.random_range(0..dim), random_complex(rng) * scale));
                }
            }
            SparseOperator::from_triplets(dim, t).expect("in range")
        };
        let a = sparse(rng, 1.0);
        let h = (&a + &a.adjoint()).scaled(C64::new(0.5, 0.0));
        let jumps = (0..n_jumps).map(|_| sparse(rng, 0.5)).collect();
        Self::new(h, jumps).expect("Hermitian by construction")
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &SparseOperator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[SparseOperator] {
        &self.jumps
    }

    pub fn effective_hamiltonian(&self) -> &SparseOperator {
        &self.h_eff
    }

    /// `L(z B z^dag) z` without forming anything of size `dim x dim`.
    pub fn apply_ltilde(&self, z: &CMat, b: &CMat, s: &CMat, ws: &mut LtildeWorkspace) -> Result<CMat> {
        let (n, m) = z.dim();
        if n != self.dim() {
            return Err(dim_mismatch("apply_ltilde z", self.dim(), n));
        }
        if b.dim() != (m, m) || s.dim() != (m, m) {
            return Err(dim_mismatch("apply_ltilde B/S", (m, m), (b.dim(), s.dim())));
        }
        ws.ensure(n, m);
        // Y = H_eff z B
        let zb = matmul(&z.view(), &b.view());
        self.h_eff.apply_into(&zb, &mut ws.a)?;
        // -i Y S + i z (Y^dag z)
        let ydz = adjoint_dot(&ws.a, z);
        let mut out = matmul(&ws.a.view(), &s.view()).mapv(|v| -I * v);
        let t = matmul(&z.view(), &ydz.view());
        Zip::from(&mut out).and(&t).for_each(|o, &v| *o += I * v);
        // J z B (z^dag J^dag z), with J (z B) applied to the cached z B
        for (jump, rows) in self.jumps.iter().zip(&self.jump_rows) {
            jump.apply_into(z, &mut ws.b)?;
            jump.apply_into(&zb, &mut ws.c)?;
            match rows {
                Some(rows) => {
                    let w = ws.b.select(Axis(0), rows);
                    let zr = z.select(Axis(0), rows);
                    let t = matmul(&ws.c.select(Axis(0), rows).view(), &adjoint_dot(&w, &zr).view());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut o = out.row_mut(r);
                        o += &t.row(k);
                    }
                }
                None => {
                    let gdz = adjoint_dot(&ws.b, z);
                    out += &matmul(&ws.c.view(), &gdz.view());
                }
            }
        }
        Ok(out)
    }

    /// Full Liouvillian on a dense matrix:
    /// `-i H_eff rho + i rho H_eff^dag + sum_k J_k rho J_k^dag`.
    pub fn apply_liouvillian_dense(&self, rho: &CMat) -> Result<CMat> {
        let n = self.dim();
        if rho.dim() != (n, n) {
            return Err(dim_mismatch("apply_liouvillian_dense", (n, n), rho.dim()));
        }
        let rho_dag = adjoint(&rho.view());
        let mut out = self.h_eff.apply(rho)?.mapv(|v| -I * v);
        let right = self.h_eff.apply(&rho_dag)?;
        Zip::from(&mut out).and(&right.t()).for_each(|o, &v| *o += I * v.conj());
        for jump in &self.jumps {
            let g = jump.apply(&rho_dag)?;
            let g = jump.apply(&adjoint(&g.view()))?;
            out += &g;
        }
        Ok(out)
    }

    /// First-order Kraus set `1 - i H_eff dt`, `sqrt(dt) J_k`.
    pub fn kraus_operators(&self, dt: f64) -> Result<Vec<SparseOperator>> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("Kraus step must be positive, got {dt}")));
        }
        let n = self.dim();
        let k0 = &SparseOperator::identity(n) - &self.h_eff.scaled(I * dt);
        let mut out = vec![k0];
        let r = C64::new(dt.sqrt(), 0.0);
        out.extend(self.jumps.iter().map(|j| j.scaled(r)));
        Ok(out)
    }
}

/// Reusable `dim x M` scratch blocks for [`LindbladModel::apply_ltilde`].
#[derive(Debug, Clone, Default)]
pub struct LtildeWorkspace {
    a: CMat,
    b: CMat,
    c: CMat,
}

impl LtildeWorkspace {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            a: Array2::zeros((n, m)),
            b: Array2::zeros((n, m)),
            c: Array2::zeros((n, m)),
        }
    }

    fn ensure(&mut self, n: usize, m: usize) {
        if self.a.dim() != (n, m) {
            *self = Self::new(n, m);
        }
    }
}

/// `sum_k K_k^dag K_k - 1`, the completeness defect of a Kraus set.
pub fn kraus_completeness_defect(kraus: &[SparseOperator]) -> SparseOperator {
    let n = kraus[0].dim();
    let terms: Vec<SparseOperator> = kraus.iter().map(|k| &k.adjoint() * k).collect();
    &sum_ops(n, terms.iter()) - &SparseOperator::identity(n).scaled(ONE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{LatticeSpec, Pauli, pauli_site};
    use crate::numerics::{frobenius_norm, hermiticity_defect, max_abs_diff, trace, ZERO};
    use crate::random::{random_density, random_hermitian, random_matrix, random_psd, rng};
    use ndarray::array;

    /// Textbook Lindbladian on dense matrices.
    fn dense_oracle(model: &LindbladModel, rho: &CMat) -> CMat {
        let h = model.hamiltonian().to_dense();
        let mut out = (h.dot(rho) - rho.dot(&h)).mapv(|v| -I * v);
        for j in model.jumps() {
            let g = j.to_dense();
            let gd = adjoint(&g.view());
            let gdg = gd.dot(&g);
            out = out + g.dot(rho).dot(&gd) - (gdg.dot(rho) + rho.dot(&gdg)).mapv(|v| v * 0.5);
        }
        out
    }

    fn decay_qubit(gamma: f64) -> LindbladModel {
        let l = LatticeSpec::new(1, 1).unwrap();
        let sm = pauli_site(&l, 0, Pauli::Minus).unwrap();
        LindbladModel::new(SparseOperator::zeros(2), vec![sm.scaled(C64::new(gamma.sqrt(), 0.0))]).unwrap()
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn effective_hamiltonian_structure() {
        let mut r = rng(3);
        let m = LindbladModel::random(&mut r, 12, 3, 3);
        let he = m.effective_hamiltonian();
        let sum = (he + &he.adjoint()).to_dense();
        let twice_h = m.hamiltonian().to_dense().mapv(|v| v * 2.0);
        assert!(max_abs_diff(&sum, &twice_h) < 1e-12);
        let bad = SparseOperator::from_triplets(2, vec![(0, 1, ONE)]).unwrap();
        assert!(matches!(LindbladModel::new(bad, vec![]), Err(Error::NotHermitian { .. })));
        assert!(LindbladModel::new(SparseOperator::zeros(2), vec![SparseOperator::zeros(3)]).is_err());
    }

    #[test]
    fn ltilde_zero_model() {
        let m = LindbladModel::new(SparseOperator::zeros(4), vec![]).unwrap();
        let mut r = rng(1);
        let z = random_matrix(&mut r, 4, 2);
        let b = random_psd(&mut r, 2, 0.1);
        let s = z.t().mapv(|v| v.conj()).dot(&z);
        let lt = m.apply_ltilde(&z, &b, &s, &mut LtildeWorkspace::default()).unwrap();
        assert_eq!(lt, Array2::<C64>::zeros((4, 2)));
    }

    #[test]
    fn ltilde_decay_by_hand() {
        let gamma = 0.7;
        let m = decay_qubit(gamma);
        let z = array![[ONE], [ZERO]];
        let one = array![[ONE]];
        let lt = m.apply_ltilde(&z, &one, &one, &mut LtildeWorkspace::default()).unwrap();
        assert!(max_abs_diff(&lt, &array![[c(-gamma)], [ZERO]]) < 1e-15);
    }

    #[test]
    fn ltilde_matches_dense_oracle() {
        let mut r = rng(7);
        let mut ws = LtildeWorkspace::default();
        for _ in 0..5 {
            let m = LindbladModel::random(&mut r, 16, 2, 3);
            let z = random_matrix(&mut r, 16, 3);
            let b = random_psd(&mut r, 3, 0.05);
            let s = adjoint(&z.view()).dot(&z);
            let rho = z.dot(&b).dot(&adjoint(&z.view()));
            let lt = m.apply_ltilde(&z, &b, &s, &mut ws).unwrap();
            let oracle = dense_oracle(&m, &rho).dot(&z);
            assert!(max_abs_diff(&lt, &oracle) < 1e-11 * (1.0 + frobenius_norm(&oracle.view())));
        }
        // local lowering operators only touch half the rows
        let l = LatticeSpec::new(2, 2).unwrap();
        let jumps = (0..4).map(|s| pauli_site(&l, s, Pauli::Minus).unwrap()).collect();
        let h = LindbladModel::random(&mut r, 16, 0, 2).hamiltonian().clone();
        let m = LindbladModel::new(h, jumps).unwrap();
        assert!(m.jump_rows.iter().all(|r| r.as_ref().map(Vec::len) == Some(8)));
        let z = random_matrix(&mut r, 16, 5);
        let b = random_psd(&mut r, 5, 0.05);
        let s = adjoint(&z.view()).dot(&z);
        let lt = m.apply_ltilde(&z, &b, &s, &mut ws).unwrap();
        let oracle = dense_oracle(&m, &z.dot(&b).dot(&adjoint(&z.view()))).dot(&z);
        assert!(max_abs_diff(&lt, &oracle) < 1e-11 * (1.0 + frobenius_norm(&oracle.view())));

        let m = LindbladModel::random(&mut r, 16, 1, 2);
        let z = random_matrix(&mut r, 15, 3);
        let b = random_psd(&mut r, 3, 0.1);
        assert!(m.apply_ltilde(&z, &b, &b, &mut ws).is_err());
    }

    #[test]
    fn dense_liouvillian_cases() {
        let gamma = 0.3;
        let m = decay_qubit(gamma);
        let down = array![[ZERO, ZERO], [ZERO, ONE]];
        assert_eq!(m.apply_liouvillian_dense(&down).unwrap(), Array2::<C64>::zeros((2, 2)));
        let up = array![[ONE, ZERO], [ZERO, ZERO]];
        let out = m.apply_liouvillian_dense(&up).unwrap();
        assert!(max_abs_diff(&out, &array![[c(-gamma), ZERO], [ZERO, c(gamma)]]) < 1e-15);
        let mut r = rng(11);
        for _ in 0..5 {
            let m = LindbladModel::random(&mut r, 10, 3, 3);
            let h = random_hermitian(&mut r, 10);
            let out = m.apply_liouvillian_dense(&h).unwrap();
            let scale = frobenius_norm(&h.view()) * 10.0;
            assert!(hermiticity_defect(&out.view()) < 1e-12 * scale);
            assert!(trace(&out).norm() < 1e-10 * scale);
            assert!(max_abs_diff(&out, &dense_oracle(&m, &h)) < 1e-11 * scale);
            let rho = random_density(&mut r, 10, 4);
            assert!(trace(&m.apply_liouvillian_dense(&rho).unwrap()).norm() < 1e-10);
        }
        assert!(m.apply_liouvillian_dense(&Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn kraus_cases() {
        let m = LindbladModel::new(SparseOperator::zeros(3), vec![]).unwrap();
        let k = m.kraus_operators(0.1).unwrap();
        assert_eq!(k, vec![SparseOperator::identity(3)]);
        assert!(m.kraus_operators(0.0).is_err());
        assert!(m.kraus_operators(-1.0).is_err());

        let gamma = 2.0;
        let q = decay_qubit(gamma);
        let dt = 1e-3;
        let k = q.kraus_operators(dt).unwrap();
        let k0 = k[0].to_dense();
        assert!((k0[[0, 0]] - c(1.0 - 0.5 * gamma * dt)).norm() < 1e-15);
        assert_eq!(k0[[1, 1]], ONE);
        assert_eq!(k0[[0, 1]], ZERO);
        // defect is exactly (gamma dt / 2)^2 on |up><up| for this model
        let d = kraus_completeness_defect(&k).to_dense();
        assert!((d[[0, 0]].re - (0.5 * gamma * dt).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn kraus_defect_is_second_order() {
        let mut r = rng(5);
        let m = LindbladModel::random(&mut r, 8, 2, 3);
        let dts = [1e-2, 1e-3, 1e-4];
        let norms: Vec<f64> = dts
            .iter()
            .map(|&dt| frobenius_norm(&kraus_completeness_defect(&m.kraus_operators(dt).unwrap()).to_dense().view()))
            .collect();
        for w in 0..2 {
            let slope = (norms[w].ln() - norms[w + 1].ln()) / (dts[w].ln() - dts[w + 1].ln());
            assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
        }
    }
}
