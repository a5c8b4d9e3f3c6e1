//! Small dense complex kernels.
//!
//! Everything here operates on `M x M` (or thin `N x K`) matrices. The only
//! large dimension in the engine, the Hilbert-space size, is never densely
//! diagonalized; see [`crate::hilbert`] for the sparse side.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;

/// Relative tolerance used when validating Hermitian inputs.
pub const HERMITIAN_RTOL: f64 = 1e-12;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn adjoint(a: &ArrayView2<C64>) -> CMat {
    a.t().mapv(|x| x.conj())
}

fn to_faer(a: &ArrayView2<C64>) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        let v = a[[i, j]];
        faer::c64::new(v.re, v.im)
    })
}

fn from_faer(m: faer::MatRef<'_, faer::c64>) -> CMat {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| {
        let v = m[(i, j)];
        C64::new(v.re, v.im)
    })
}

/// Below this many multiply-adds the copy into faer is not worth it.
const SMALL_PRODUCT: usize = 1 << 15;

/// `a b`. Large products go through faer's complex kernels, which are
/// several times faster than ndarray's for complex entries.
pub fn matmul(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> CMat {
    if a.nrows() * a.ncols() * b.ncols() < SMALL_PRODUCT {
        return a.dot(b);
    }
    from_faer((to_faer(a) * to_faer(b)).as_ref())
}

/// `a^H b`.
pub fn adjoint_dot(a: &CMat, b: &CMat) -> CMat {
    if a.nrows() * a.ncols() * b.ncols() < SMALL_PRODUCT {
        return adjoint(&a.view()).dot(b);
    }
    from_faer((to_faer(&a.view()).adjoint() * to_faer(&b.view())).as_ref())
}

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, ONE)
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// `Tr{a b}` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    let mut acc = ZERO;
    for ((i, j), &x) in a.indexed_iter() {
        acc += x * b[[j, i]];
    }
    acc
}

pub fn frobenius_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &ArrayView2<C64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

/// `max_ij |a_ij - conj(a_ji)|`.
pub fn hermiticity_defect(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut d = 0.0f64;
    for i in 0..n {
        for j in i..n {
            d = d.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    d
}

pub fn hermitian_part(a: &ArrayView2<C64>) -> CMat {
    let mut h = a.to_owned();
    let n = a.nrows();
    for i in 0..n {
        h[[i, i]] = C64::new(a[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]].conj());
            h[[i, j]] = v;
            h[[j, i]] = v.conj();
        }
    }
    h
}

/// Rejects non-square or non-Hermitian matrices (relative tolerance
/// [`HERMITIAN_RTOL`] against the largest entry).
pub fn check_hermitian(a: &ArrayView2<C64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(crate::error::dim_mismatch(
            "hermitian check",
            "square matrix",
            a.dim(),
        ));
    }
    let defect = hermiticity_defect(a);
    if defect > HERMITIAN_RTOL * max_abs(a).max(1.0) {
        return Err(Error::NotHermitian { defect });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Array1<f64>,
    /// Orthonormal eigenvectors, one per column.
    pub vectors: CMat,
}

impl Eigen {
    /// `V diag(g(w)) V^H`.
    pub fn reassemble(&self, g: impl Fn(f64) -> f64) -> CMat {
        let mut scaled = self.vectors.clone();
        for (mut col, &w) in scaled.axis_iter_mut(Axis(1)).zip(self.values.iter()) {
            let gw = g(w);
            col.mapv_inplace(|x| x * gw);
        }
        matmul(&scaled.view(), &adjoint(&self.vectors.view()).view())
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eigen(a: &ArrayView2<C64>) -> Result<Eigen> {
    check_hermitian(a)?;
    symmetric_eigen(hermitian_part(a))
}

fn symmetric_eigen(a: CMat) -> Result<Eigen> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Eigen {
            values: Array1::zeros(0),
            vectors: CMat::zeros((0, 0)),
        });
    }
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidArgument("eigendecomposition of a non-finite matrix".into()));
    }
    let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
        let v = a[[i, j]];
        faer::c64::new(v.re, v.im)
    });
    let e = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidArgument(format!("eigendecomposition failed: {e:?}")))?;
    let (w, u) = (e.S().column_vector(), e.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j].re.total_cmp(&w[i].re));
    let values = Array1::from_iter(order.iter().map(|&k| w[k].re));
    let vectors = CMat::from_shape_fn((n, n), |(i, k)| {
        let v = u[(i, order[k])];
        C64::new(v.re, v.im)
    });
    Ok(Eigen { values, vectors })
}

/// Parameters of the smooth spectral filter used for pseudo-inversion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinvConfig {
    pub atol: f64,
    pub rtol: f64,
    pub filter_exponent: u32,
}

impl Default for PinvConfig {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            rtol: 1e-5,
            filter_exponent: 6,
        }
    }
}

impl PinvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0) || !(self.rtol >= 0.0) || self.filter_exponent == 0 {
            return Err(Error::InvalidArgument(format!(
                "pinv config requires atol > 0, rtol >= 0, exponent >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Adaptive cutoff `lambda^2 = max(atol, rtol * max sigma^2)`.
    pub fn cutoff(&self, largest: f64) -> f64 {
        self.atol.max(self.rtol * largest)
    }
}

/// `f(s) = 1 / (1 + (lambda2 / s)^p)`.
pub fn filter(sigma2: f64, lambda2: f64, exponent: u32) -> f64 {
    if sigma2 == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (lambda2 / sigma2).powi(exponent as i32))
}

/// Filtered inverse assembled from an existing eigendecomposition. The
/// filter acts on `|w|`, which are the singular values of a Hermitian
/// matrix, so slightly indefinite input is handled like its SVD.
pub fn filtered_inverse(eig: &Eigen, cfg: &PinvConfig) -> Result<CMat> {
    let largest = eig.values.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let lambda2 = cfg.cutoff(largest);
    Ok(eig.reassemble(|w| {
        if w == 0.0 {
            0.0
        } else {
            filter(w.abs(), lambda2, cfg.filter_exponent) / w
        }
    }))
}

/// Smoothly regularized pseudoinverse of a Hermitian matrix.
///
/// The singular values of a Hermitian matrix are the moduli of its
/// eigenvalues, so the eigendecomposition is used directly.
pub fn regularized_pinv(a: &ArrayView2<C64>, cfg: &PinvConfig) -> Result<CMat> {
    cfg.validate()?;
    let eig = hermitian_eigen(a)?;
    filtered_inverse(&eig, cfg)
}

/// Principal square root of a Hermitian PSD matrix.
pub fn matrix_sqrt_psd(a: &ArrayView2<C64>) -> Result<CMat> {
    let eig = hermitian_eigen(a)?;
    let floor = -PinvConfig::default().atol * eig.values.iter().fold(1.0f64, |m, w| m.max(w.abs()));
    if let Some(&w) = eig.values.iter().find(|&&w| w < floor) {
        return Err(Error::NegativeEigenvalue { value: w, floor });
    }
    Ok(eig.reassemble(|w| w.max(0.0).sqrt()))
}

/// Thin orthonormal factorization `u = q r` by modified Gram-Schmidt with
/// one reorthogonalization pass. Columns whose residual norm falls below
/// `drop_rtol` times the largest input column norm are treated as dependent,
/// so `q` has `r <= min(n, k)` columns and `r` is `r x k`.
pub fn orthonormal_factor(u: &ArrayView2<C64>, drop_rtol: f64) -> (CMat, CMat) {
    let (n, k) = u.dim();
    let scale = u
        .axis_iter(Axis(1))
        .map(|c| c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut basis: Vec<Array1<C64>> = Vec::new();
    let mut coeffs: Vec<Vec<C64>> = Vec::with_capacity(k);
    for col in u.axis_iter(Axis(1)) {
        let mut w = col.to_owned();
        let mut c = vec![ZERO; basis.len() + 1];
        for _pass in 0..2 {
            for (j, q) in basis.iter().enumerate() {
                let proj: C64 = q.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
                w.scaled_add(-proj, q);
                c[j] += proj;
            }
        }
        let nrm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm > drop_rtol * scale && basis.len() < n {
            c[basis.len()] = C64::new(nrm, 0.0);
            basis.push(w.mapv(|x| x / nrm));
        } else {
            c.pop();
        }
        coeffs.push(c);
    }
    let r_dim = basis.len();
    let mut q = CMat::zeros((n, r_dim));
    for (j, b) in basis.iter().enumerate() {
        q.column_mut(j).assign(b);
    }
    let mut r = CMat::zeros((r_dim, k));
    for (col, c) in coeffs.iter().enumerate() {
        for (row, &x) in c.iter().enumerate() {
            r[[row, col]] = x;
        }
    }
    (q, r)
}

/// Orthonormal basis of the column span of `u`.
pub fn orthonormalize(u: &ArrayView2<C64>) -> CMat {
    orthonormal_factor(u, 1e-12).0
}
