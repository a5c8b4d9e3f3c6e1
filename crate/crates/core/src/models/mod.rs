//! Benchmark systems: dissipative spin lattices, coupled nonlinear
//! cavities and driven cat qubits.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::{CMat, C64};

pub mod cat;
pub mod faf;
pub mod xyz;

/// Orthonormalizes `candidates` in order, skipping vectors already in the
/// span, until `count` columns are found.
pub fn gram_schmidt(candidates: &[Array1<C64>], count: usize) -> Result<CMat> {
    let n = candidates.first().map(|v| v.len()).unwrap_or(0);
    let mut cols: Vec<Array1<C64>> = Vec::with_capacity(count);
    for v in candidates {
        if cols.len() == count {
            break;
        }
        let mut u = v.clone();
        for _ in 0..2 {
            for q in &cols {
                let c: C64 = q.iter().zip(u.iter()).map(|(a, b)| a.conj() * b).sum();
                u.zip_mut_with(q, |x, &y| *x -= c * y);
            }
        }
        let nrm = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let scale = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-8 * scale.max(1e-300) {
            cols.push(u.mapv(|x| x / nrm));
        }
    }
    if cols.len() < count {
        return Err(Error::InvalidArgument(format!(
            "only {} independent basis vectors available, {count} requested",
            cols.len()
        )));
    }
    let mut z = Array2::zeros((n, count));
    for (j, c) in cols.iter().enumerate() {
        z.column_mut(j).assign(c);
    }
    Ok(z)
}

/// Columns are all products of one column per factor, the first factor
/// varying slowest; column 0 is the product of the leading columns.
pub fn product_basis(factors: &[CMat]) -> CMat {
    let mut out = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    for f in factors {
        let (r0, c0) = out.dim();
        let (r1, c1) = f.dim();
        let mut next = Array2::zeros((r0 * r1, c0 * c1));
        for i0 in 0..r0 {
            for j0 in 0..c0 {
                let a = out[[i0, j0]];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for i1 in 0..r1 {
                    for j1 in 0..c1 {
                        next[[i0 * r1 + i1, j0 * c1 + j1]] = a * f[[i1, j1]];
                    }
                }
            }
        }
        out = next;
    }
    out
}

/// `B = e_1 e_1^T`: all weight on the first basis vector.
pub fn leading_population(m: usize) -> CMat {
    let mut b = Array2::zeros((m, m));
    b[[0, 0]] = C64::new(1.0, 0.0);
    b
}
