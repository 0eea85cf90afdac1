//! Dense row-major matrices and the few linear-algebra kernels the rest of
//! the crate needs: row normalization, similarity matrices, softmax
//! cross-entropy, singular values, symmetric eigendecomposition, PCA and an
//! SPD solver.
//!
//! Everything is `f64`. Nothing here knows about modalities or losses.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values with at least one row and
/// one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty(format!("matrix shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("no rows".into()));
        }
        let d = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(n, d, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "transpose_matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Subtract `offset` from every row.
    pub fn sub_row_vector(&self, offset: &[f64]) -> Matrix {
        assert_eq!(offset.len(), self.cols);
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols) {
            for (v, o) in r.iter_mut().zip(offset) {
                *v -= o;
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        assert!(!idx.is_empty(), "select_rows needs at least one index");
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Row-wise concatenation.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "vstack with {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub const DEFAULT_NORMALIZE_EPS: f64 = 1e-12;

/// Result of [`l2_normalize_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    pub matrix: Matrix,
    /// Indices of rows whose norm was below `eps`; those rows are returned
    /// unchanged.
    pub degenerate: Vec<usize>,
}

impl NormalizedRows {
    pub fn has_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

pub fn l2_normalize_rows(m: &Matrix, eps: f64) -> NormalizedRows {
    let mut out = m.clone();
    let mut degenerate = Vec::new();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n < eps {
            degenerate.push(i);
            continue;
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    NormalizedRows {
        matrix: out,
        degenerate,
    }
}

/// `out[i][j] = a_i · b_j`.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "similarity between {}-dim and {}-dim rows",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] = dot(ai, b.row(j));
        }
    }
    Ok(out)
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy over rows, with gradient w.r.t. the logits.
///
/// The gradient is `(softmax(row) − onehot(label)) / rows`.
pub fn row_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.is_empty() {
        return Err(Error::Empty("cross-entropy labels".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                logits.cols()
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(i);
        let mut z = 0.0;
        for (gj, &x) in g.iter_mut().zip(row) {
            *gj = (x - max).exp();
            z += *gj;
        }
        loss += z.ln() - (row[y] - max);
        for gj in g.iter_mut() {
            *gj /= z * n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Singular values in descending order, length `min(rows, cols)`.
///
/// One-sided (Hestenes) Jacobi on the taller orientation of `m`; the
/// column norms of the orthogonalized matrix are the singular values.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let a = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = a.shape();
    // Column-major working copy so that each rotation touches contiguous memory.
    let mut columns: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)]).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (left, right) = columns.split_at_mut(q);
                let cp = &mut left[p];
                let cq = &mut right[0];
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the second matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok((values, vectors))
}

/// Projection onto the top two principal components of the centered data.
///
/// Each component's sign is fixed so its largest-magnitude loading is
/// positive, which makes the output deterministic.
pub fn pca_project_2d(m: &Matrix) -> Result<Matrix> {
    if m.cols() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA to 2-D needs at least 2 columns, got {}",
            m.cols()
        )));
    }
    if m.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    let centered = m.sub_row_vector(&m.column_means());
    let cov = centered
        .transpose_matmul(&centered)?
        .scale(1.0 / m.rows() as f64);
    let (_, vectors) = symmetric_eigen(&cov)?;

    let mut basis = Matrix::zeros(m.cols(), 2);
    for c in 0..2 {
        let col: Vec<f64> = (0..m.cols()).map(|k| vectors[(k, c)]).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (k, x) in col.iter().enumerate() {
            basis[(k, c)] = sign * x;
        }
    }
    centered.matmul(&basis)
}

/// Solve `a · x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                let d = a[(i, i)] - s;
                if d <= 0.0 {
                    return Err(Error::Degenerate(
                        "matrix is not positive definite".into(),
                    ));
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[(i, k)] * x[(k, c)]).sum();
            x[(i, c)] = (x[(i, c)] - s) / l[(i, i)];
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[(k, c)]).sum();
            x[(i, c)] = (x[(i, c)] - s) / l[(i, i)];
        }
    }
    Ok(x)
}
