//! Low-rank density matrices `rho = z B z^dag`.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{dim_mismatch, Error, Result};
use crate::hilbert::SparseOperator;
use crate::numerics::{
    adjoint, adjoint_dot, check_hermitian, hermitian_eigen, hermitian_part, max_abs_diff, orthonormal_factor,
    regularized_pinv, trace_of_product, CMat, PinvConfig, C64,
};

/// Largest Hilbert-space dimension for which dense matrices are formed.
pub const DENSE_LIMIT: usize = 4096;

/// Probabilities below this fraction of the largest one count as zero.
pub const NULL_CUTOFF: f64 = 1e-12;

/// Gram drift above which the cached `S` is recomputed.
pub const GRAM_REFRESH_TOL: f64 = 1e-8;

/// Negative spectral weight tolerated (relative to the largest) before a
/// state is declared unphysical.
const NEGATIVE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankState {
    z: CMat,
    b: CMat,
    s: CMat,
    s_inv: CMat,
    pinv: PinvConfig,
}

/// Diagonal form `rho = sum_j p_j |eta_j><eta_j|`.
#[derive(Debug, Clone)]
pub struct SpectralForm {
    /// Descending, non-negative.
    pub probabilities: Array1<f64>,
    /// Orthonormal columns.
    pub eta: CMat,
}

impl LowRankState {
    pub fn new(z: CMat, b: CMat, pinv: PinvConfig) -> Result<Self> {
        let m = z.ncols();
        if m == 0 || z.nrows() == 0 {
            return Err(Error::InvalidArgument("low-rank state needs at least one column".into()));
        }
        if b.dim() != (m, m) {
            return Err(dim_mismatch("population matrix", (m, m), b.dim()));
        }
        check_hermitian(&b.view())?;
        pinv.validate()?;
        let s = adjoint_dot(&z, &z);
        let s_inv = regularized_pinv(&s.view(), &pinv)?;
        Ok(Self {
            z,
            b: hermitian_part(&b.view()),
            s,
            s_inv,
            pinv,
        })
    }

    /// Restores a state with a previously cached Gram matrix `s`; only the
    /// regularized inverse is recomputed.
    pub fn from_parts(z: CMat, b: CMat, s: CMat, pinv: PinvConfig) -> Result<Self> {
        let m = z.ncols();
        if b.dim() != (m, m) || s.dim() != (m, m) {
            return Err(dim_mismatch("state parts", (m, m), (b.dim(), s.dim())));
        }
        let s_inv = regularized_pinv(&s.view(), &pinv)?;
        Ok(Self { z, b, s, s_inv, pinv })
    }

    /// Pure state `|psi><psi| / <psi|psi>`.
    pub fn pure(psi: &Array1<C64>, pinv: PinvConfig) -> Result<Self> {
        let nrm = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let z = psi.mapv(|x| x / nrm).insert_axis(Axis(1));
        Self::new(z, Array2::from_elem((1, 1), C64::new(1.0, 0.0)), pinv)
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &CMat {
        &self.z
    }

    pub fn b(&self) -> &CMat {
        &self.b
    }

    /// Cached Gram matrix.
    pub fn gram(&self) -> &CMat {
        &self.s
    }

    pub fn gram_inv(&self) -> &CMat {
        &self.s_inv
    }

    pub fn pinv_config(&self) -> &PinvConfig {
        &self.pinv
    }

    /// Replaces `z` and `B` while keeping the cached Gram matrix; callers
    /// follow up with [`Self::refresh_gram`] when the drift matters.
    pub(crate) fn set_parts(&mut self, z: CMat, b: CMat) {
        debug_assert_eq!(z.dim(), self.z.dim());
        self.z = z;
        self.b = b;
    }

    pub(crate) fn scale_populations(&mut self, f: f64) {
        self.b.mapv_inplace(|v| v * f);
    }

    /// `Tr{B z^dag z}` with a freshly computed overlap matrix.
    pub fn trace(&self) -> f64 {
        trace_of_product(&self.b, &adjoint_dot(&self.z, &self.z)).re
    }

    /// `max |z^dag z - S_cached|`.
    pub fn gram_drift(&self) -> f64 {
        max_abs_diff(&adjoint_dot(&self.z, &self.z), &self.s)
    }

    pub fn refresh_gram(&mut self) -> Result<()> {
        self.s = adjoint_dot(&self.z, &self.z);
        self.s_inv = regularized_pinv(&self.s.view(), &self.pinv)?;
        Ok(())
    }

    pub fn refresh_gram_if_drifted(&mut self) -> Result<bool> {
        if self.gram_drift() > GRAM_REFRESH_TOL {
            self.refresh_gram()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// All eigenpairs of `rho` inside `span(z)`, descending. Uses the thin
    /// factorization `z = Q R`, so `rho = Q (R B R^dag) Q^dag`.
    pub(crate) fn span_eigen(&self) -> Result<(Array1<f64>, CMat)> {
        let (q, r) = orthonormal_factor(&self.z.view(), 1e-13);
        let core = r.dot(&self.b).dot(&adjoint(&r.view()));
        let eig = hermitian_eigen(&hermitian_part(&core.view()).view())?;
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        if let Some(&low) = eig.values.iter().last() {
            let floor = -NEGATIVE_RTOL * top.max(1e-300);
            if low < floor && low < -1e-14 {
                return Err(Error::NegativeEigenvalue { value: low, floor });
            }
        }
        Ok((eig.values, q.dot(&eig.vectors)))
    }

    pub fn diagonalize(&self) -> Result<SpectralForm> {
        let (p, eta) = self.span_eigen()?;
        let top = p.first().copied().unwrap_or(0.0);
        let keep = p.iter().take_while(|&&v| v > NULL_CUTOFF * top && v > 0.0).count();
        Ok(SpectralForm {
            probabilities: p.slice(s![..keep]).to_owned(),
            eta: eta.slice(s![.., ..keep]).to_owned(),
        })
    }

    pub fn entropy(&self) -> Result<f64> {
        Ok(entropy_of(self.diagonalize()?.probabilities.iter().copied()))
    }

    pub fn purity(&self) -> f64 {
        let s = adjoint_dot(&self.z, &self.z);
        let bs = self.b.dot(&s);
        trace_of_product(&bs, &bs).re
    }

    pub fn reconstruct_dense(&self) -> Result<CMat> {
        let n = self.dim();
        if n > DENSE_LIMIT {
            return Err(Error::DenseLimit { dim: n, limit: DENSE_LIMIT });
        }
        let rho = self.z.dot(&self.b).dot(&adjoint(&self.z.view()));
        Ok(hermitian_part(&rho.view()))
    }
}

/// `-sum p ln p` over entries above the null cutoff.
pub fn entropy_of(p: impl IntoIterator<Item = f64>) -> f64 {
    let p: Vec<f64> = p.into_iter().collect();
    let top = p.iter().copied().fold(0.0f64, f64::max);
    p.iter()
        .filter(|&&v| v > NULL_CUTOFF * top && v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Anything that can produce `Tr{rho A}`.
pub trait Expectation {
    fn hilbert_dim(&self) -> usize;
    fn expect(&self, op: &SparseOperator) -> Result<C64>;
}

impl Expectation for LowRankState {
    fn hilbert_dim(&self) -> usize {
        self.dim()
    }

    /// `Tr{B z^dag (A z)}`.
    fn expect(&self, op: &SparseOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(dim_mismatch("expectation", self.dim(), op.dim()));
        }
        let az = op.apply(&self.z)?;
        Ok(trace_of_product(&self.b, &adjoint_dot(&self.z, &az)))
    }
}

impl Expectation for CMat {
    fn hilbert_dim(&self) -> usize {
        self.nrows()
    }

    fn expect(&self, op: &SparseOperator) -> Result<C64> {
        if self.dim() != (op.dim(), op.dim()) {
            return Err(dim_mismatch("expectation", (op.dim(), op.dim()), self.dim()));
        }
        Ok(op.triplets().into_iter().map(|(i, j, v)| v * self[[j, i]]).sum())
    }
}

/// Normalized Hilbert-Schmidt overlap `Re Tr{A^dag B} / (|A| |B|)`.
pub fn overlap(a: &CMat, b: &CMat) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch("overlap", a.dim(), b.dim()));
    }
    let ab: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("overlap of a zero matrix".into()));
    }
    Ok((ab.re / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Same as [`overlap`] for two low-rank states, never forming `dim x dim`.
pub fn overlap_lowrank(a: &LowRankState, b: &LowRankState) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch("overlap", a.dim(), b.dim()));
    }
    // Tr{rho_a rho_b} = Tr{B_a (z_a^dag z_b) B_b (z_b^dag z_a)}
    let x = adjoint_dot(a.z(), b.z());
    let ab = trace_of_product(&a.b.dot(&x), &b.b.dot(&adjoint(&x.view()))).re;
    let (pa, pb) = (a.purity(), b.purity());
    if pa <= 0.0 || pb <= 0.0 {
        return Err(Error::InvalidArgument("overlap of a zero state".into()));
    }
    Ok((ab / (pa * pb).sqrt()).clamp(-1.0, 1.0))
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
pub fn trace_norm(a: &CMat) -> Result<f64> {
    Ok(hermitian_eigen(&a.view())?.values.iter().map(|v| v.abs()).sum())
}

/// Column count of the Gram-Schmidt factor, i.e. the numerical rank of `z`.
pub fn numerical_rank(z: &CMat) -> usize {
    orthonormal_factor(&z.view(), 1e-12).0.ncols()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{pauli_site, LatticeSpec, Pauli};
    use crate::numerics::{hermiticity_defect, identity, ONE, ZERO};
    use crate::random::{random_hermitian, random_matrix, random_psd, random_unitary, rng};
    use ndarray::array;

    fn normalized(z: CMat, b: CMat) -> LowRankState {
        let st = LowRankState::new(z, b, PinvConfig::default()).unwrap();
        let t = st.trace();
        let mut st = st;
        st.scale_populations(1.0 / t);
        st
    }

    fn random_state(seed: u64, n: usize, m: usize) -> LowRankState {
        let mut r = rng(seed);
        normalized(random_matrix(&mut r, n, m), random_psd(&mut r, m, 0.05))
    }

    #[test]
    fn expectation_cases() {
        let st = random_state(1, 16, 3);
        let id = SparseOperator::identity(16);
        assert!((st.expect(&id).unwrap() - ONE).norm() < 1e-12);
        let l = LatticeSpec::new(1, 1).unwrap();
        let down = LowRankState::pure(&array![ZERO, ONE], PinvConfig::default()).unwrap();
        let z = pauli_site(&l, 0, Pauli::Z).unwrap();
        assert!((down.expect(&z).unwrap() + ONE).norm() < 1e-15);
        let mut r = rng(2);
        let a = SparseOperator::from_dense(&random_hermitian(&mut r, 16)).unwrap();
        let rho = st.reconstruct_dense().unwrap();
        let oracle: C64 = rho.dot(&a.to_dense()).diag().sum();
        assert!((st.expect(&a).unwrap() - oracle).norm() < 1e-11);
        assert!((rho.expect(&a).unwrap() - oracle).norm() < 1e-11);
        assert!(st.expect(&SparseOperator::identity(8)).is_err());
    }

    #[test]
    fn diagonalize_cases() {
        // orthonormal z, diagonal B
        let mut r = rng(4);
        let u = random_unitary(&mut r, 6);
        let z = u.slice(s![.., ..3]).to_owned();
        let b = Array2::from_diag(&array![0.6, 0.3, 0.1].mapv(|x| C64::new(x, 0.0)));
        let st = LowRankState::new(z.clone(), b, PinvConfig::default()).unwrap();
        let sf = st.diagonalize().unwrap();
        for (k, want) in [0.6, 0.3, 0.1].iter().enumerate() {
            assert!((sf.probabilities[k] - want).abs() < 1e-12);
            let ov: C64 = sf.eta.column(k).iter().zip(z.column(k)).map(|(a, b)| a.conj() * b).sum();
            assert!((ov.norm() - 1.0).abs() < 1e-12);
        }
        // non-orthogonal two-state basis vs dense eigen
        let st = random_state(5, 8, 2);
        let sf = st.diagonalize().unwrap();
        let dense = hermitian_eigen(&st.reconstruct_dense().unwrap().view()).unwrap();
        assert_eq!(sf.probabilities.len(), 2);
        for k in 0..2 {
            assert!((sf.probabilities[k] - dense.values[k]).abs() < 1e-10);
        }
        assert!(dense.values.iter().skip(2).all(|v| v.abs() < 1e-12));
        // rank-deficient B
        let st = LowRankState::new(
            u.slice(s![.., ..2]).to_owned(),
            array![[ONE, ZERO], [ZERO, ZERO]],
            PinvConfig::default(),
        )
        .unwrap();
        let sf = st.diagonalize().unwrap();
        assert_eq!(sf.probabilities.len(), 1);
        assert!((sf.probabilities[0] - 1.0).abs() < 1e-14);
        // unphysical B
        let bad = LowRankState::new(identity(2), array![[ONE, ZERO], [ZERO, C64::new(-0.5, 0.0)]], PinvConfig::default())
            .unwrap();
        assert!(bad.diagonalize().is_err());
    }

    #[test]
    fn spectral_form_reassembles_rho() {
        for seed in 0..8 {
            let st = random_state(100 + seed, 12 + seed as usize, 1 + seed as usize % 5);
            let sf = st.diagonalize().unwrap();
            let mut rho = CMat::zeros((st.dim(), st.dim()));
            for (k, &p) in sf.probabilities.iter().enumerate() {
                let e = sf.eta.column(k);
                for i in 0..st.dim() {
                    for j in 0..st.dim() {
                        rho[[i, j]] += e[i] * e[j].conj() * p;
                    }
                }
            }
            let dense = st.reconstruct_dense().unwrap();
            assert!(max_abs_diff(&rho, &dense) < 1e-12);
            assert!((sf.probabilities.sum() - 1.0).abs() < 1e-10);
            let ete = adjoint_dot(&sf.eta, &sf.eta);
            assert!(max_abs_diff(&ete, &identity(sf.eta.ncols())) < 1e-10);
        }
    }

    #[test]
    fn entropy_cases() {
        let pure = LowRankState::pure(&array![ONE, ONE, ZERO], PinvConfig::default()).unwrap();
        assert!(pure.entropy().unwrap().abs() < 1e-14);
        let half = LowRankState::new(identity(2), identity(2).mapv(|v| v * 0.5), PinvConfig::default()).unwrap();
        assert!((half.entropy().unwrap() - 2f64.ln()).abs() < 1e-14);
        assert_eq!(entropy_of([1.0, 0.0, 1e-20]), 0.0);
    }

    #[test]
    fn entropy_invariant_under_basis_mixing() {
        let mut r = rng(9);
        for seed in 0..5 {
            let st = random_state(200 + seed, 10, 4);
            let u = random_unitary(&mut r, 4);
            // z -> z U, B -> U^dag B U keeps z B z^dag fixed for unitary U
            let z2 = st.z().dot(&u);
            let b2 = adjoint(&u.view()).dot(st.b()).dot(&u);
            let st2 = LowRankState::new(z2, b2, PinvConfig::default()).unwrap();
            assert!((st.entropy().unwrap() - st2.entropy().unwrap()).abs() < 1e-10);
            assert!(max_abs_diff(&st.reconstruct_dense().unwrap(), &st2.reconstruct_dense().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn overlap_cases() {
        let st = random_state(10, 9, 3);
        let rho = st.reconstruct_dense().unwrap();
        assert!((overlap(&rho, &rho).unwrap() - 1.0).abs() < 1e-14);
        assert!((overlap_lowrank(&st, &st).unwrap() - 1.0).abs() < 1e-12);
        let a = LowRankState::pure(&array![ONE, ZERO, ZERO], PinvConfig::default()).unwrap();
        let b = LowRankState::pure(&array![ZERO, ONE, ZERO], PinvConfig::default()).unwrap();
        let (ra, rb) = (a.reconstruct_dense().unwrap(), b.reconstruct_dense().unwrap());
        assert_eq!(overlap(&ra, &rb).unwrap(), 0.0);
        assert_eq!(overlap_lowrank(&a, &b).unwrap(), 0.0);
        let other = random_state(11, 9, 2);
        let ro = other.reconstruct_dense().unwrap();
        let o1 = overlap(&rho, &ro).unwrap();
        assert!((o1 - overlap(&ro, &rho).unwrap()).abs() < 1e-14);
        assert!((o1 - overlap_lowrank(&st, &other).unwrap()).abs() < 1e-12);
        assert!(overlap(&rho, &CMat::zeros((9, 9))).is_err());
    }

    #[test]
    fn reconstruct_and_refresh() {
        let st = random_state(12, 20, 4);
        let rho = st.reconstruct_dense().unwrap();
        assert!(hermiticity_defect(&rho.view()) == 0.0);
        let w = hermitian_eigen(&rho.view()).unwrap();
        assert!(w.values.iter().all(|&v| v > -1e-9));
        let big = LowRankState::new(CMat::zeros((DENSE_LIMIT + 1, 1)) + ONE, array![[ONE]], PinvConfig::default()).unwrap();
        assert!(matches!(big.reconstruct_dense(), Err(Error::DenseLimit { .. })));

        let mut r = rng(13);
        let q = crate::numerics::orthonormalize(&random_matrix(&mut r, 10, 3).view());
        let mut st = LowRankState::new(q, random_psd(&mut r, 3, 0.2), PinvConfig::default()).unwrap();
        assert!(max_abs_diff(st.gram(), &identity(3)) < 1e-14);
        let mut z = st.z().clone();
        z[[0, 0]] += C64::new(1e-6, 0.0);
        let b = st.b().clone();
        st.set_parts(z.clone(), b.clone());
        assert!(st.gram_drift() > 1e-8);
        let before = st.reconstruct_dense().unwrap();
        assert!(st.refresh_gram_if_drifted().unwrap());
        assert_eq!(st.gram_drift(), 0.0);
        assert_eq!(st.z(), &z);
        assert_eq!(st.b(), &b);
        assert_eq!(st.reconstruct_dense().unwrap(), before);
    }
}
