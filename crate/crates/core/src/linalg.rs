//! Sparse triplet matrices and a banded LU factorization with partial pivoting.
//!
//! The KKT systems produced by multiple-shooting transcriptions are banded once
//! the unknowns are ordered stage by stage. [`BandLu`] factors such systems in
//! `O(n * kl * (kl + ku))` time.

use nalgebra::{DMatrix, SymmetricEigen};

/// Coordinate-format sparse matrix. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Adds a dense block with its top-left corner at `(row, col)`.
    pub fn push_block(&mut self, row: usize, col: usize, block: &DMatrix<f64>) {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                self.push(row + i, col + j, block[(i, j)]);
            }
        }
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    /// `y = A^T x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(i, j, v) in &self.entries {
            y[j] += v * x[i];
        }
        y
    }

    /// Entries grouped by row, duplicates summed.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows];
        for &(i, j, v) in &self.entries {
            rows[i].push((j, v));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            *row = merged;
        }
        rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc.max(e.2.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is numerically singular at pivot {pivot}")]
pub struct SingularMatrix {
    pub pivot: usize,
}

/// LU factorization of a square banded matrix with row interchanges.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; the extra `kl` columns hold
/// the fill created by pivoting.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Factors the matrix given as triplets. Bandwidths are taken from the
    /// sparsity pattern.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self, SingularMatrix> {
        let mut kl = 0;
        let mut ku = 0;
        for &(i, j, _) in entries {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        let mut scale = 0.0f64;
        for &(i, j, v) in entries {
            *lu.at_mut(i, j) += v;
            scale = scale.max(v.abs());
        }
        lu.eliminate(scale.max(f64::MIN_POSITIVE))?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    fn eliminate(&mut self, scale: f64) -> Result<(), SingularMatrix> {
        let n = self.n;
        let tiny = scale * 1e-14;
        for j in 0..n {
            let last_row = (j + self.kl).min(n - 1);
            let last_col = (j + self.kl + self.ku).min(n - 1);
            let mut p = j;
            let mut best = self.at(j, j).abs();
            for i in j + 1..=last_row {
                let v = self.at(i, j).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(SingularMatrix { pivot: j });
            }
            self.pivots[j] = p;
            if p != j {
                for c in j..=last_col {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let piv = self.at(j, j);
            for i in j + 1..=last_row {
                let l = self.at(i, j) / piv;
                *self.at_mut(i, j) = l;
                if l != 0.0 {
                    for c in j + 1..=last_col {
                        let u = self.at(j, c);
                        *self.at_mut(i, c) -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for i in j + 1..=(j + self.kl).min(n - 1) {
                    b[i] -= self.at(i, j) * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for c in j + 1..=(j + self.kl + self.ku).min(n - 1) {
                s -= self.at(j, c) * b[c];
            }
            b[j] = s / self.at(j, j);
        }
    }
}

/// Solves `A x = b` for a sparse square `A` via [`BandLu`] with two steps of
/// iterative refinement against the original entries.
pub fn solve_refined(
    n: usize,
    entries: &[(usize, usize, f64)],
    rhs: &[f64],
) -> Result<Vec<f64>, SingularMatrix> {
    let lu = BandLu::factor(n, entries)?;
    let mut x = rhs.to_vec();
    lu.solve_in_place(&mut x);
    for _ in 0..2 {
        let mut r = rhs.to_vec();
        for &(i, j, v) in entries {
            r[i] -= v * x[j];
        }
        lu.solve_in_place(&mut r);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
    }
    Ok(x)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lo = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Upper-triangular square root `U` with `U^T U = m` (Cholesky), or `None` when
/// `m` is not positive definite.
pub fn chol_upper(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().map(|c| c.l().transpose())
}
