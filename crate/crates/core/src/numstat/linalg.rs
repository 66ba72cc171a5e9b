//! Dense matrices, Cholesky factorization, covariance, and a symmetric
//! eigensolver. Everything here is sized for desk-scale problems
//! (dimensions in the tens to low hundreds), so the implementations favor
//! clarity and determinism over blocked performance tricks.

use crate::error::{Error, Result};

/// Row-major dense matrix. Constructors reject non-finite entries so the
/// rest of the crate can assume clean data.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() {
            return Err(Error::EmptySample);
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_flat(rows.len(), cols, data)
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Diagonal matrix from the given entries.
    pub fn from_diag(diag: &[f64]) -> Result<Matrix> {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("diagonal entries"));
            }
            m[(i, i)] = v;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `A * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `A^T * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for c in 0..self.cols {
                out[c] += row[c] * xr;
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn add_scaled_identity(&mut self, delta: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            let v = self[(i, i)] + delta;
            self[(i, i)] = v;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Sample mean and covariance with divisor `n` (maximum-likelihood form),
/// accumulated with Welford-style updates. Rows of `x` are observations.
pub fn mean_cov(x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut mean = vec![0.0; p];
    let mut m2 = Matrix::zeros(p, p);
    for i in 0..n {
        let row = x.row(i);
        let delta: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        let inv = 1.0 / (i as f64 + 1.0);
        for j in 0..p {
            mean[j] += delta[j] * inv;
        }
        // delta uses the old mean, (row - mean) the updated one.
        for j in 0..p {
            for l in j..p {
                m2[(j, l)] += delta[j] * (row[l] - mean[l]);
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut cov = Matrix::zeros(p, p);
    for j in 0..p {
        for l in j..p {
            let v = m2[(j, l)] * inv_n;
            cov[(j, l)] = v;
            cov[(l, j)] = v;
        }
    }
    Ok((mean, cov))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// with the log-determinant of the factored matrix and a record of any ridge
/// regularization that was applied to reach positive definiteness.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: Matrix,
    log_det: f64,
    ridge: Option<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// log det of the matrix that was factored (after any ridge).
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// The ridge delta added to the diagonal, if factorization needed one.
    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    /// Solve `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "solve_lower dimension mismatch");
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = self.l.row(i);
            let s: f64 = (0..i).map(|j| row[j] * y[j]).sum();
            y[i] = (b[i] - s) / row[i];
        }
        y
    }
}

fn try_factor(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d <= 0.0 {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Cholesky factorization with a one-shot ridge retry: if the matrix is not
/// positive definite, `delta = 1e-6 * trace / p` (floored at 1e-12 so an
/// all-zero scatter still factors) is added to the diagonal and the
/// factorization retried once.
pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor> {
    if a.rows() != a.cols() {
        return Err(Error::DimMismatch { expected: a.rows(), got: a.cols() });
    }
    if a.rows() == 0 {
        return Err(Error::EmptySample);
    }
    let (l, ridge) = match try_factor(a) {
        Some(l) => (l, None),
        None => {
            let mut delta = 1e-6 * a.trace() / a.rows() as f64;
            if !delta.is_finite() || delta <= 0.0 {
                delta = 1e-12;
            }
            let mut ridged = a.clone();
            ridged.add_scaled_identity(delta);
            match try_factor(&ridged) {
                Some(l) => (l, Some(delta)),
                None => return Err(Error::NotPositiveDefinite),
            }
        }
    };
    let log_det = (0..l.rows()).map(|i| 2.0 * l[(i, i)].ln()).sum();
    Ok(CholeskyFactor { l, log_det, ridge })
}

/// Squared Mahalanobis distance `(x - mu)^T Sigma^{-1} (x - mu)` computed
/// through one triangular solve against the Cholesky factor of `Sigma`.
pub fn mahalanobis_sq(x: &[f64], mu: &[f64], factor: &CholeskyFactor) -> Result<f64> {
    if x.len() != factor.dim() {
        return Err(Error::DimMismatch { expected: factor.dim(), got: x.len() });
    }
    if mu.len() != factor.dim() {
        return Err(Error::DimMismatch { expected: factor.dim(), got: mu.len() });
    }
    let y = factor.solve_lower(&sub(x, mu));
    Ok(dot(&y, &y))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in non-increasing order and the matching eigenvectors
/// as the rows of the returned matrix, each with its first entry of
/// magnitude > 1e-12 made positive so the decomposition is deterministic.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows() != a.cols() {
        return Err(Error::DimMismatch { expected: a.rows(), got: a.cols() });
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut m = a.clone();
    // Symmetrize defensively; callers pass covariance matrices.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let norm: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * norm.max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = m[(i, j)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..n {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..n {
                    let vki = v[(k, i)];
                    let vkj = v[(k, j)];
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a_, &b_| m[(b_, b_)].total_cmp(&m[(a_, a_)]).then(a_.cmp(&b_)));
    let mut values = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n, n);
    for (out, &idx) in order.iter().enumerate() {
        values.push(m[(idx, idx)]);
        let mut col: Vec<f64> = (0..n).map(|r| v[(r, idx)]).collect();
        if let Some(first) = col.iter().find(|e| e.abs() > 1e-12) {
            if *first < 0.0 {
                for e in &mut col {
                    *e = -*e;
                }
            }
        }
        for (c, val) in col.into_iter().enumerate() {
            vectors[(out, c)] = val;
        }
    }
    Ok((values, vectors))
}
