//! Row-compressed sparse matrices and a direct LU solver (backed by faer).

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Zero matrix with the given sorted column pattern per row.
    pub fn from_pattern(rows: &[Vec<usize>]) -> SparseMatrix {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        SparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> SparseMatrix {
        let rows: Vec<Vec<usize>> =
            a.iter().map(|r| (0..r.len()).filter(|&j| r[j] != 0.0).collect()).collect();
        let mut m = SparseMatrix::from_pattern(&rows);
        for (i, r) in a.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn identity(n: usize) -> SparseMatrix {
        let rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut m = SparseMatrix::from_pattern(&rows);
        m.values.fill(1.0);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry of `A - A^T` in absolute value.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// `l_inf` norm.
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse LU factorization of a matrix, solving with it or its transpose.
pub struct Factorization {
    matrix: SparseMatrix,
    // LU of the transpose: the CSR arrays read as CSC describe A^T
    lu_t: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.matrix.n).finish()
    }
}

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Factorization> {
        if a.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix("non-finite matrix entry".into()));
        }
        let symbolic = SymbolicSparseColMat::new_checked(a.n, a.n, a.row_ptr.clone(), None, a.col_idx.clone());
        let at = SparseColMat::new(symbolic, a.values.clone());
        let lu_t = at.sp_lu().map_err(|e| Error::SingularMatrix(format!("{e:?}")))?;
        Ok(Factorization { matrix: a.clone(), lu_t })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(b, false)
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(b, true)
    }

    fn raw(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = if transpose { self.lu_t.solve(&rhs) } else { self.lu_t.solve_transpose(&rhs) };
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    fn residual(&self, x: &[f64], b: &[f64], transpose: bool) -> Vec<f64> {
        let ax = if transpose { self.matrix.matvec_transpose(x) } else { self.matrix.matvec(x) };
        b.iter().zip(ax).map(|(b, a)| b - a).collect()
    }

    fn solve_checked(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.matrix.n, "right-hand side length mismatch");
        let mut x = self.raw(b, transpose);
        // one step of iterative refinement
        let r = self.residual(&x, b, transpose);
        let dx = self.raw(&r, transpose);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix("non-finite solution".into()));
        }
        let r = max_norm(&self.residual(&x, b, transpose));
        let scale = self.matrix.max_abs() * max_norm(&x) + max_norm(b);
        if r > 1e-6 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularMatrix(format!("residual {r:.3e} after solve (scale {scale:.3e})")));
        }
        Ok(x)
    }
}

/// Factor and solve in one call.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Factorization::new(a)?.solve(b)
}
