//! Sparse storage and symmetric positive definite solves.
//!
//! Matrices are stored as full symmetric CSR with sorted column indices, so the
//! same arrays read as CSC. Direct solves go through faer's supernodal
//! Cholesky with a cached symbolic analysis per sparsity pattern; very large
//! systems fall back to Jacobi-preconditioned conjugate gradients.

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Side};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Systems above this many unknowns are solved iteratively.
pub const DIRECT_LIMIT: usize = 200_000;
/// Relative residual target of the iterative fallback.
pub const ITERATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrPattern {
    /// Pattern of a matrix assembled from element connectivities.
    pub fn from_elements<'a, I>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize; 3]>,
    {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for el in elements {
            for &a in el {
                for &b in el {
                    rows[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Storage slot of entry (i, j), if structurally present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    /// Pattern restricted to the kept indices, plus the full-storage slot
    /// of every reduced entry and the reduced index of every full index.
    pub fn restrict(&self, keep: &[bool]) -> (CsrPattern, Vec<usize>, Vec<Option<usize>>) {
        let mut map = vec![None; self.n];
        let mut m = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = Some(m);
                m += 1;
            }
        }
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut col_idx = Vec::new();
        let mut gather = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n {
            if map[i].is_none() {
                continue;
            }
            for s in self.row(i) {
                if let Some(c) = map[self.col_idx[s]] {
                    col_idx.push(c);
                    gather.push(s);
                }
            }
            row_ptr.push(col_idx.len());
        }
        (
            CsrPattern {
                n: m,
                row_ptr,
                col_idx,
            },
            gather,
            map,
        )
    }
}

/// Square sparse matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_parts(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Self {
        assert_eq!(pattern.nnz(), values.len());
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |s| self.values[s])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let cols = self.pattern.col_idx();
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.pattern.row(i).map(|s| self.values[s] * x[cols[s]]).sum();
        }
    }

    /// Row `i` of the product with `x`.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let cols = self.pattern.col_idx();
        self.pattern.row(i).map(|s| self.values[s] * x[cols[s]]).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.pattern.row(i).map(|s| self.values[s]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// Largest |a_ij - a_ji| relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cols = self.pattern.col_idx();
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for s in self.pattern.row(i) {
                let j = cols[s];
                let d = (self.values[s] - self.get(j, i)).abs();
                worst = worst.max(d);
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let cols = self.pattern.col_idx();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for s in self.pattern.row(i) {
                d[(i, cols[s])] = self.values[s];
            }
        }
        d
    }
}

/// How a pattern's systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStrategy {
    /// Direct below [`DIRECT_LIMIT`] unknowns, iterative above.
    Auto,
    Direct,
    Iterative,
}

/// Solver bound to one sparsity pattern; caches the symbolic factorization.
#[derive(Debug)]
pub struct SpdSolver {
    pattern: Arc<CsrPattern>,
    strategy: SolverStrategy,
    symbolic: OnceLock<std::result::Result<SymbolicLlt<usize>, String>>,
}

impl SpdSolver {
    pub fn new(pattern: Arc<CsrPattern>) -> Self {
        Self::with_strategy(pattern, SolverStrategy::Auto)
    }

    pub fn with_strategy(pattern: Arc<CsrPattern>, strategy: SolverStrategy) -> Self {
        Self {
            pattern,
            strategy,
            symbolic: OnceLock::new(),
        }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    fn use_direct(&self) -> bool {
        match self.strategy {
            SolverStrategy::Auto => self.pattern.dim() <= DIRECT_LIMIT,
            SolverStrategy::Direct => true,
            SolverStrategy::Iterative => false,
        }
    }

    fn symbolic_ref(&self) -> SymbolicSparseColMatRef<'_, usize> {
        let p = &self.pattern;
        SymbolicSparseColMatRef::new_checked(p.dim(), p.dim(), p.row_ptr(), None, p.col_idx())
    }

    /// Factorizes the matrix with the given values (pattern storage order).
    pub fn factor(&self, values: &[f64]) -> Result<SpdFactor> {
        if values.len() != self.pattern.nnz() {
            return Err(Error::DimensionMismatch {
                what: "sparse values",
                expected: self.pattern.nnz(),
                found: values.len(),
            });
        }
        if !self.use_direct() {
            return Ok(SpdFactor::Iterative(SparseMatrix::from_parts(
                self.pattern.clone(),
                values.to_vec(),
            )));
        }
        if self.pattern.dim() == 0 {
            return Ok(SpdFactor::Empty);
        }
        let symbolic = self
            .symbolic
            .get_or_init(|| {
                SymbolicLlt::try_new(self.symbolic_ref(), Side::Lower).map_err(|e| format!("{e:?}"))
            })
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))?;
        let mat = SparseColMatRef::new(self.symbolic_ref(), values);
        let llt = Llt::try_new_with_symbolic(symbolic.clone(), mat, Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SpdFactor::Direct(llt))
    }
}

#[derive(Debug)]
pub enum SpdFactor {
    Empty,
    Direct(Llt<usize, f64>),
    Iterative(SparseMatrix),
}

impl SpdFactor {
    /// Solves in place for `k` right-hand sides stored column-major in `rhs`.
    pub fn solve_many(&self, rhs: &mut [f64], k: usize) -> Result<()> {
        match self {
            SpdFactor::Empty => Ok(()),
            SpdFactor::Direct(llt) => {
                let n = rhs.len() / k.max(1);
                let view = MatMut::from_column_major_slice_mut(rhs, n, k);
                llt.solve_in_place_with_conj(Conj::No, view);
                Ok(())
            }
            SpdFactor::Iterative(a) => {
                let n = a.dim();
                for col in rhs.chunks_mut(n) {
                    let b = col.to_vec();
                    pcg(a, &b, col, ITERATIVE_TOLERANCE, 20 * n + 1000)?;
                }
                Ok(())
            }
        }
    }

    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        self.solve_many(rhs, 1)
    }
}

/// Jacobi-preconditioned conjugate gradients; `x` holds the initial guess.
/// Returns the iteration count.
pub fn pcg(a: &SparseMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.dim();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if norm(&r) <= tol * bnorm {
            return Ok(it);
        }
        a.mul_vec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = norm(&r) / bnorm;
    if residual <= tol {
        Ok(max_iter)
    } else {
        Err(Error::SolverFailure {
            iterations: max_iter,
            residual,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Spectral norm of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &s| a.max(s))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &s| a.min(s))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
