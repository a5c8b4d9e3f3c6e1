//! Seeded random matrices. Used by the random-orthogonal inflation rule and
//! by tests; every generator takes an explicit RNG so runs stay reproducible.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{adjoint, orthonormalize, CMat, C64};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_complex<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    Array2::from_shape_simple_fn((rows, cols), || random_complex(rng))
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat {
    let g = random_matrix(rng, n, n);
    (&g + &adjoint(&g.view())).mapv(|x| x * 0.5)
}

/// Haar-distributed unitary (orthonormalized Ginibre columns).
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMat {
    loop {
        let q = orthonormalize(&random_matrix(rng, n, n).view());
        if q.ncols() == n {
            return q;
        }
    }
}

/// Random PSD matrix with eigenvalues in `[floor, 1]` (log-spaced when
/// `floor > 0`, uniform otherwise), both endpoints attained for `n >= 2`.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> CMat {
    let u = random_unitary(rng, n);
    let mut w: Array1<f64> = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
    if floor > 0.0 {
        w.mapv_inplace(|x| floor.powf(x));
    }
    if n >= 2 {
        w[0] = 1.0;
        w[n - 1] = floor;
    }
    let d = Array2::from_diag(&w.mapv(|x| C64::new(x, 0.0)));
    u.dot(&d).dot(&adjoint(&u.view()))
}

/// Random density matrix of the given rank (normalized Wishart).
pub fn random_density<R: Rng>(rng: &mut R, n: usize, rank: usize) -> CMat {
    let w = random_matrix(rng, n, rank);
    let rho = w.dot(&adjoint(&w.view()));
    let tr = rho.diag().iter().map(|x| x.re).sum::<f64>();
    rho.mapv(|x| x / tr)
}

/// Unit vector orthogonal to the columns of `basis` (assumed orthonormal or
/// at least well conditioned).
pub fn random_orthogonal_vector<R: Rng>(rng: &mut R, basis: &CMat) -> Option<Array1<C64>> {
    let n = basis.nrows();
    if basis.ncols() >= n {
        return None;
    }
    for _ in 0..8 {
        let mut v: Array1<C64> = Array1::from_shape_simple_fn(n, || random_complex(rng));
        for _pass in 0..2 {
            for col in basis.columns() {
                let nc = col.iter().map(|x| x.norm_sqr()).sum::<f64>();
                let p: C64 = col.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                v.scaled_add(-p / nc, &col);
            }
        }
        let nrm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            return Some(v.mapv(|x| x / nrm));
        }
    }
    None
}
