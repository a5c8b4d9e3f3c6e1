//! Sparse operators on composite Hilbert spaces.
//!
//! Site ordering convention: the leftmost tensor factor is site (or mode) 0,
//! so site 0 is the most significant digit of a basis index. Lattice sites
//! are numbered row-major, `site = y * lx + x`. For spins, local state 0 is
//! spin up and local state 1 is spin down.

use std::ops::{Add, Mul, Neg, Sub};

use ndarray::Array2;

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::{CMat, C64, ONE, ZERO};

/// Square sparse complex matrix in compressed-row form with sorted,
/// duplicate-free column indices per row and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    /// Builds the canonical form: duplicates are summed, exact zeros dropped.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Result<Self> {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            if r >= dim || c >= dim {
                return Err(Error::IndexOutOfRange {
                    what: "operator entry",
                    index: r.max(c),
                    size: dim,
                });
            }
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            dim,
            row_ptr,
            cols: keep_cols,
            vals: keep_vals,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal((0..dim).map(|_| ONE))
    }

    pub fn diagonal(entries: impl IntoIterator<Item = C64>) -> Self {
        let d: Vec<C64> = entries.into_iter().collect();
        let n = d.len();
        Self::from_triplets(n, d.into_iter().enumerate().map(|(i, v)| (i, i, v)))
            .expect("diagonal indices are in range")
    }

    pub fn from_dense(a: &CMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(dim_mismatch("sparse from dense", "square", a.dim()));
        }
        Self::from_triplets(
            a.nrows(),
            a.indexed_iter().filter(|(_, v)| **v != ZERO).map(|((i, j), &v)| (i, j, v)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Canonical (row-sorted, column-sorted) triplet list.
    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i, self.cols[k], self.vals[k]));
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.row(i).find(|&(c, _)| c == j).map_or(ZERO, |(_, v)| v)
    }

    pub fn to_dense(&self) -> CMat {
        let mut a = Array2::zeros((self.dim, self.dim));
        for (i, j, v) in self.triplets() {
            a[[i, j]] = v;
        }
        a
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().into_iter().map(|(i, j, v)| (j, i, v.conj())))
            .expect("same dimension")
    }

    pub fn scaled(&self, c: C64) -> Self {
        if c == ZERO {
            return Self::zeros(self.dim);
        }
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let adj = self.adjoint();
        (self - &adj).vals.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let scale = self.vals.iter().fold(1.0f64, |m, v| m.max(v.norm()));
        self.hermiticity_defect() <= tol * scale
    }

    /// `out = self * x` for a dense `dim x m` block; never forms anything
    /// denser than `x`.
    pub fn apply_into(&self, x: &CMat, out: &mut CMat) -> Result<()> {
        if x.nrows() != self.dim {
            return Err(dim_mismatch("sparse apply", self.dim, x.nrows()));
        }
        if out.dim() != x.dim() {
            return Err(dim_mismatch("sparse apply output", x.dim(), out.dim()));
        }
        let m = x.ncols();
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().ok_or_else(|| {
            Error::InvalidArgument("sparse apply output must be contiguous".into())
        })?;
        for i in 0..self.dim {
            let orow = &mut os[i * m..(i + 1) * m];
            orow.iter_mut().for_each(|v| *v = ZERO);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k];
                let c = self.cols[k];
                let xrow = &xs[c * m..(c + 1) * m];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += a * xv;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        let mut out = Array2::zeros(x.raw_dim());
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Sparse-sparse product `self * rhs`.
    pub fn matmul(&self, rhs: &SparseOperator) -> Result<SparseOperator> {
        if self.dim != rhs.dim {
            return Err(dim_mismatch("sparse product", self.dim, rhs.dim));
        }
        let n = self.dim;
        let mut acc = vec![ZERO; n];
        let mut mark = vec![usize::MAX; n];
        let mut touched = Vec::new();
        let mut trip = Vec::new();
        for i in 0..n {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = ZERO;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                trip.push((i, j, acc[j]));
            }
        }
        Self::from_triplets(n, trip)
    }

    /// Kronecker product `self (x) rhs`.
    pub fn kron(&self, rhs: &SparseOperator) -> SparseOperator {
        let n = self.dim * rhs.dim;
        let mut trip = Vec::with_capacity(self.nnz() * rhs.nnz());
        for (i, j, a) in self.triplets() {
            for (k, l, b) in rhs.triplets() {
                trip.push((i * rhs.dim + k, j * rhs.dim + l, a * b));
            }
        }
        Self::from_triplets(n, trip).expect("kron indices in range")
    }

    fn combine(&self, rhs: &SparseOperator, sign: f64) -> SparseOperator {
        assert_eq!(self.dim, rhs.dim, "operator dimensions differ");
        let trip = self
            .triplets()
            .into_iter()
            .chain(rhs.triplets().into_iter().map(|(i, j, v)| (i, j, v * sign)));
        Self::from_triplets(self.dim, trip).expect("same dimension")
    }
}

impl Add for &SparseOperator {
    type Output = SparseOperator;
    fn add(self, rhs: &SparseOperator) -> SparseOperator {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &SparseOperator {
    type Output = SparseOperator;
    fn sub(self, rhs: &SparseOperator) -> SparseOperator {
        self.combine(rhs, -1.0)
    }
}

impl Neg for &SparseOperator {
    type Output = SparseOperator;
    fn neg(self) -> SparseOperator {
        self.scaled(C64::new(-1.0, 0.0))
    }
}

/// Panics on a dimension mismatch; use [`SparseOperator::matmul`] to get an
/// error instead.
impl Mul for &SparseOperator {
    type Output = SparseOperator;
    fn mul(self, rhs: &SparseOperator) -> SparseOperator {
        self.matmul(rhs).expect("operator dimensions differ")
    }
}

impl Mul<&SparseOperator> for f64 {
    type Output = SparseOperator;
    fn mul(self, rhs: &SparseOperator) -> SparseOperator {
        rhs.scaled(C64::new(self, 0.0))
    }
}

impl Mul<&SparseOperator> for C64 {
    type Output = SparseOperator;
    fn mul(self, rhs: &SparseOperator) -> SparseOperator {
        rhs.scaled(self)
    }
}

/// Sum of operators of equal dimension; `dim` is used for the empty sum.
pub fn sum_ops<'a>(dim: usize, ops: impl IntoIterator<Item = &'a SparseOperator>) -> SparseOperator {
    let mut trip = Vec::new();
    for op in ops {
        assert_eq!(op.dim(), dim, "operator dimensions differ");
        trip.extend(op.triplets());
    }
    SparseOperator::from_triplets(dim, trip).expect("same dimension")
}

/// Embeds local operators acting on distinct factors of a product space with
/// the given local dimensions; identities elsewhere.
pub fn tensor_embed(local_dims: &[usize], ops: &[(usize, &SparseOperator)]) -> Result<SparseOperator> {
    let total: usize = local_dims.iter().product();
    let mut strides = vec![1usize; local_dims.len()];
    for s in (0..local_dims.len().saturating_sub(1)).rev() {
        strides[s] = strides[s + 1] * local_dims[s + 1];
    }
    let mut seen = vec![false; local_dims.len()];
    // per-op column lists: local column -> [(local row, value)]
    let mut cols_of: Vec<(usize, Vec<Vec<(usize, C64)>>)> = Vec::with_capacity(ops.len());
    for &(site, op) in ops {
        if site >= local_dims.len() {
            return Err(Error::IndexOutOfRange {
                what: "site",
                index: site,
                size: local_dims.len(),
            });
        }
        if seen[site] {
            return Err(Error::InvalidArgument(format!("site {site} appears twice in tensor_embed")));
        }
        seen[site] = true;
        if op.dim() != local_dims[site] {
            return Err(dim_mismatch("local operator", local_dims[site], op.dim()));
        }
        let mut by_col = vec![Vec::new(); op.dim()];
        for (i, j, v) in op.triplets() {
            by_col[j].push((i, v));
        }
        cols_of.push((site, by_col));
    }
    cols_of.sort_by_key(|(site, _)| *site);
    let mut trip = Vec::new();
    let mut cur: Vec<(usize, C64)> = Vec::new();
    let mut next: Vec<(usize, C64)> = Vec::new();
    for col in 0..total {
        cur.clear();
        cur.push((col, ONE));
        for (site, by_col) in &cols_of {
            let stride = strides[*site];
            let digit = (col / stride) % local_dims[*site];
            next.clear();
            for &(row, v) in &cur {
                for &(lr, lv) in &by_col[digit] {
                    next.push((row - digit * stride + lr * stride, v * lv));
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if cur.is_empty() {
                break;
            }
        }
        trip.extend(cur.iter().map(|&(row, v)| (row, col, v)));
    }
    SparseOperator::from_triplets(total, trip)
}

/// Open rectangular lattice of spin-1/2 sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatticeSpec {
    pub lx: usize,
    pub ly: usize,
}

impl LatticeSpec {
    pub fn new(lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::InvalidArgument(format!("lattice must be non-empty, got {lx}x{ly}")));
        }
        Ok(Self { lx, ly })
    }

    pub fn sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn hilbert_dim(&self) -> usize {
        1usize << self.sites()
    }

    pub fn local_dims(&self) -> Vec<usize> {
        vec![2; self.sites()]
    }
}

/// Nearest-neighbour pairs `(i, j)` with `i < j` of the open grid.
pub fn grid_edges(lattice: &LatticeSpec) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for y in 0..lattice.ly {
        for x in 0..lattice.lx {
            let i = y * lattice.lx + x;
            if x + 1 < lattice.lx {
                edges.push((i, i + 1));
            }
            if y + 1 < lattice.ly {
                edges.push((i, i + lattice.lx));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    /// Lowering operator `|down><up| = (X - iY) / 2`.
    Minus,
    Plus,
}

impl Pauli {
    pub fn local(self) -> SparseOperator {
        let (o, i) = (ONE, C64::new(0.0, 1.0));
        let t = match self {
            Pauli::X => vec![(0, 1, o), (1, 0, o)],
            Pauli::Y => vec![(0, 1, -i), (1, 0, i)],
            Pauli::Z => vec![(0, 0, o), (1, 1, -o)],
            Pauli::Minus => vec![(1, 0, o)],
            Pauli::Plus => vec![(0, 1, o)],
        };
        SparseOperator::from_triplets(2, t).expect("2x2")
    }
}

pub fn pauli_site(lattice: &LatticeSpec, site: usize, which: Pauli) -> Result<SparseOperator> {
    if site >= lattice.sites() {
        return Err(Error::IndexOutOfRange {
            what: "lattice site",
            index: site,
            size: lattice.sites(),
        });
    }
    tensor_embed(&lattice.local_dims(), &[(site, &which.local())])
}

/// Product of truncated single-boson Fock spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FockSpec {
    pub modes: usize,
    pub cutoff: usize,
}

impl FockSpec {
    pub fn new(modes: usize, cutoff: usize) -> Result<Self> {
        if modes == 0 || cutoff == 0 {
            return Err(Error::InvalidArgument(format!(
                "Fock space needs modes >= 1 and cutoff >= 1, got {modes}, {cutoff}"
            )));
        }
        Ok(Self { modes, cutoff })
    }

    pub fn hilbert_dim(&self) -> usize {
        self.cutoff.pow(self.modes as u32)
    }

    pub fn local_dims(&self) -> Vec<usize> {
        vec![self.cutoff; self.modes]
    }
}

/// Single-mode annihilation operator on `cutoff` number states.
pub fn local_annihilate(cutoff: usize) -> SparseOperator {
    SparseOperator::from_triplets(
        cutoff,
        (1..cutoff).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    )
    .expect("in range")
}

pub fn boson_annihilate(fock: &FockSpec, mode: usize) -> Result<SparseOperator> {
    if mode >= fock.modes {
        return Err(Error::IndexOutOfRange {
            what: "mode",
            index: mode,
            size: fock.modes,
        });
    }
    tensor_embed(&fock.local_dims(), &[(mode, &local_annihilate(fock.cutoff))])
}
