//! Thin linear algebra layer: deterministic dense factorizations on top of
//! faer, a row-compressed sparse matrix for the assembly maps, and small
//! vector helpers.
//!
//! All faer calls run with sequential parallelism so repeated runs produce
//! bit-identical results.

use std::collections::BTreeMap;
use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::{Error, Result};

static SEQ: Once = Once::new();

/// Pins faer to sequential execution (idempotent).
pub fn ensure_deterministic() {
    SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Max-norm of a slice; zero for empty input.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Euclidean norm of a slice.
pub fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Column vector from a slice.
pub fn col_from(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Slice from a column vector.
pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    assert_eq!(m.ncols(), 1);
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// LU factorization with partial pivoting plus one step of iterative
/// refinement per solve. Keeps the original matrix for residuals.
pub struct LuSolver {
    a: Mat<f64>,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl LuSolver {
    pub fn new(a: Mat<f64>) -> Result<Self> {
        ensure_deterministic();
        assert_eq!(a.nrows(), a.ncols(), "LU expects a square matrix");
        let lu = a.partial_piv_lu();
        let s = Self { a, lu };
        Ok(s)
    }

    /// Solves `A x = b` with one refinement pass; errors on non-finite
    /// results, which is how a numerically singular matrix surfaces.
    pub fn solve(&self, b: &Mat<f64>) -> Result<Mat<f64>> {
        let mut x = self.lu.solve(b);
        let r = b - &self.a * &x;
        let dx = self.lu.solve(&r);
        x += &dx;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::LinearSolve(
                        "factorization produced non-finite solution".into(),
                    ));
                }
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(col_to_vec(&self.solve(&col_from(b))?))
    }
}

/// Cholesky factorization; construction fails if the matrix is not symmetric
/// positive definite.
pub struct CholSolver {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl CholSolver {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        ensure_deterministic();
        let llt = a
            .llt(faer::Side::Lower)
            .map_err(|_| Error::LinearSolve("matrix is not positive definite".into()))?;
        Ok(Self { llt })
    }

    pub fn solve(&self, b: &Mat<f64>) -> Mat<f64> {
        self.llt.solve(b)
    }
}

/// Numerical rank by full-pivot Gaussian elimination. Intended for small
/// matrices in structural checks, not for performance.
pub fn dense_rank(a: &Mat<f64>, tol_rel: f64) -> usize {
    let (m, n) = (a.nrows(), a.ncols());
    let mut w: Vec<Vec<f64>> = (0..m).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let scale = (0..m)
        .flat_map(|i| w[i].iter().map(|x| x.abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let tol = tol_rel * scale;
    let mut rank = 0;
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    while rank < rows.len().min(cols.len()) {
        let (mut best, mut bi, mut bj) = (0.0, rank, rank);
        for ri in rank..rows.len() {
            for cj in rank..cols.len() {
                let v = w[rows[ri]][cols[cj]].abs();
                if v > best {
                    (best, bi, bj) = (v, ri, cj);
                }
            }
        }
        if best <= tol {
            break;
        }
        rows.swap(rank, bi);
        cols.swap(rank, bj);
        let (pr, pc) = (rows[rank], cols[rank]);
        let pivot = w[pr][pc];
        for ri in rank + 1..rows.len() {
            let r = rows[ri];
            let f = w[r][pc] / pivot;
            if f != 0.0 {
                for cj in rank..cols.len() {
                    let c = cols[cj];
                    w[r][c] -= f * w[pr][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Sparse matrix stored as sorted per-row maps; deterministic iteration.
#[derive(Debug, Clone)]
pub struct SparseMat {
    nrows: usize,
    ncols: usize,
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SparseMat {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: vec![BTreeMap::new(); nrows],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Accumulates `v` into entry `(r, c)`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            *self.rows[r].entry(c).or_insert(0.0) += v;
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.rows[r].insert(c, v);
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[r].iter().map(|(&c, &v)| (c, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r].get(&c).copied().unwrap_or(0.0)
    }

    pub fn clear_row(&mut self, r: usize) {
        self.rows[r].clear();
    }

    /// `self * x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        self.rows
            .iter()
            .map(|row| row.iter().map(|(&c, &v)| v * x[c]).sum())
            .collect()
    }

    /// `self^T * x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                out[c] += v * x[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn transpose(&self) -> SparseMat {
        let mut t = SparseMat::new(self.ncols, self.nrows);
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                t.add(c, r, v);
            }
        }
        t
    }

    /// `dense * self`, exploiting sparsity of `self` column-wise.
    pub fn left_mul_dense(&self, lhs: &Mat<f64>) -> Mat<f64> {
        assert_eq!(lhs.ncols(), self.nrows);
        let mut out = Mat::zeros(lhs.nrows(), self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                for i in 0..lhs.nrows() {
                    out[(i, c)] += lhs[(i, r)] * v;
                }
            }
        }
        out
    }

    /// `self * dense`.
    pub fn right_mul_dense(&self, rhs: &Mat<f64>) -> Mat<f64> {
        assert_eq!(self.ncols, rhs.nrows());
        let mut out = Mat::zeros(self.nrows, rhs.ncols());
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                for j in 0..rhs.ncols() {
                    out[(r, j)] += v * rhs[(c, j)];
                }
            }
        }
        out
    }
}
