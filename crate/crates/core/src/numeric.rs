//! Dense linear algebra and scalar special functions used by every other
//! module: row-major matrices, SVD-backed pseudoinverse and spectral norm,
//! the Gram-pseudoinverse least-squares solve, and the standard normal CDF.
//!
//! The SVD is a one-sided Jacobi iteration. Matrices here are tiny (tens of
//! rows at most) and frequently rank-deficient by construction, and Jacobi
//! keeps full accuracy on the small singular values that the pseudoinverse
//! cutoff logic depends on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff (to the largest singular value) below which singular
/// values are treated as zero in pseudoinverse and rank decisions.
pub const DEFAULT_RTOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-14;

/// Dense real matrix, entries stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    /// Build a matrix from row-major entries. Rejects shape/entry-count
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entry count",
                expected: format!("{}", rows * cols),
                got: format!("{}", entries.len()),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Contract("rows have unequal lengths".into()));
        }
        Self::new(rows.len(), ncols, rows.concat())
    }

    /// Diagonal matrix from the given values.
    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.entries[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_vec(&self, row: usize) -> Vec<f64> {
        self.row(row).to_vec()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Matrix product; panics on inner-dimension mismatch (programmer error).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.entries[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimensions");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Gram matrix `AᵀA`.
    pub fn gram(&self) -> Self {
        self.transpose().matmul(self)
    }

    /// Stack the rows of `self` on top of the rows of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "vstack column counts");
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            entries,
        }
    }

    /// New matrix keeping only the rows selected by `keep`.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(keep.len() * self.cols);
        for &r in keep {
            entries.extend_from_slice(self.row(r));
        }
        Self {
            rows: keep.len(),
            cols: self.cols,
            entries,
        }
    }

}

/// Thin singular value decomposition `m = U diag(σ) Vᵀ` with the singular
/// values sorted descending and orthonormal columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left_vectors: Matrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
}

impl SvdResult {
    /// Number of singular values above `rtol * σ_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let cutoff = rtol * self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }

    /// Column `j` of the right-vector matrix.
    pub fn right_vector(&self, j: usize) -> Vec<f64> {
        (0..self.right_vectors.rows())
            .map(|i| self.right_vectors.get(i, j))
            .collect()
    }
}

/// Thin SVD of `m`.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(SvdResult {
            left_vectors: Matrix::zeros(m.rows(), 0),
            singular_values: Vec::new(),
            right_vectors: Matrix::zeros(m.cols(), 0),
        });
    }
    if m.rows() < m.cols() {
        // Decompose the transpose and swap the factor roles.
        let t = svd(&m.transpose())?;
        return Ok(SvdResult {
            left_vectors: t.right_vectors,
            singular_values: t.singular_values,
            right_vectors: t.left_vectors,
        });
    }
    jacobi_svd(m)
}

/// One-sided Jacobi SVD for `rows >= cols`: rotate column pairs of a work
/// copy until all pairs are orthogonal, read the singular values off the
/// column norms, and accumulate the rotations into `V`.
fn jacobi_svd(m: &Matrix) -> Result<SvdResult> {
    let rows = m.rows();
    let cols = m.cols();
    // Column-major work copy.
    let mut w: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut col = vec![0.0; cols];
            col[j] = 1.0;
            col
        })
        .collect();

    // Columns that cancellation has driven down to rounding noise carry no
    // direction information and would keep the relative pair test from ever
    // passing; flush them to exact zero.
    let zero_tol = f64::EPSILON * m.frobenius_norm();
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        converged = true;
        for col in w.iter_mut() {
            if norm2(col) <= zero_tol {
                col.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let wp = w[p][i];
                    let wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for i in 0..cols {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps for a {rows}x{cols} matrix"
        )));
    }

    // Sort by column norm, descending; ties keep the lower original index.
    let norms: Vec<f64> = w.iter().map(|col| norm2(col)).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let mut left = Matrix::zeros(rows, cols);
    let mut right = Matrix::zeros(cols, cols);
    let mut singular_values = Vec::with_capacity(cols);
    let mut left_cols: Vec<Option<Vec<f64>>> = vec![None; cols];
    for (k, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        for i in 0..cols {
            right.set(i, k, v[src][i]);
        }
        if sigma > 0.0 {
            left_cols[k] = Some(w[src].iter().map(|&x| x / sigma).collect());
        }
    }

    // Columns with zero singular value have no direction in the data;
    // complete them to an orthonormal basis from standard basis vectors.
    let mut filled: Vec<Vec<f64>> = left_cols.iter().flatten().cloned().collect();
    for slot in left_cols.iter_mut() {
        if slot.is_some() {
            continue;
        }
        // Take the standard basis vector with the largest residual against
        // the current columns; its norm is at least sqrt(free/rows) > 0.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for cand in 0..rows {
            let mut e = vec![0.0; rows];
            e[cand] = 1.0;
            for _ in 0..2 {
                for u in &filled {
                    let proj = dot(&e, u);
                    for (ei, ui) in e.iter_mut().zip(u) {
                        *ei -= proj * ui;
                    }
                }
            }
            let n = norm2(&e);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, e));
            }
        }
        let (n, mut e) = best.expect("rows >= 1");
        assert!(n > 1e-8, "basis completion found no free direction");
        for ei in &mut e {
            *ei /= n;
        }
        filled.push(e.clone());
        *slot = Some(e);
    }
    for (k, col) in left_cols.iter().enumerate() {
        let col = col.as_ref().expect("all slots filled");
        for i in 0..rows {
            left.set(i, k, col[i]);
        }
    }

    Ok(SvdResult {
        left_vectors: left,
        singular_values,
        right_vectors: right,
    })
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values below
/// `rtol * σ_max`.
pub fn pinv(m: &Matrix, rtol: f64) -> Result<Matrix> {
    let decomp = svd(m)?;
    let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rtol * sigma_max;
    // pinv = V diag(1/σ) Uᵀ over the retained singular values.
    let mut out = Matrix::zeros(m.cols(), m.rows());
    for (k, &s) in decomp.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..m.cols() {
            let vik = decomp.right_vectors.get(i, k);
            for j in 0..m.rows() {
                let ujk = decomp.left_vectors.get(j, k);
                out.entries[i * m.rows() + j] += vik * inv * ujk;
            }
        }
    }
    Ok(out)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.singular_values.first().copied().unwrap_or(0.0))
}

/// Least-squares weights `(XᵀX)† Xᵀ y` through the Gram pseudoinverse.
pub fn least_squares(x: &Matrix, y: &[f64], rtol: f64) -> Result<Vec<f64>> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "least_squares rows vs targets",
            expected: format!("{}", x.rows()),
            got: format!("{}", y.len()),
        });
    }
    let gram_pinv = pinv(&x.gram(), rtol)?;
    let xty = x.transpose().matvec(y);
    Ok(gram_pinv.matvec(&xty))
}

/// Standard normal CDF. Odd-symmetric around zero by construction, so
/// `gaussian_cdf(z) + gaussian_cdf(-z)` is 1 up to rounding.
pub fn gaussian_cdf(z: f64) -> f64 {
    let t = z / std::f64::consts::SQRT_2;
    let e = libm::erf(t.abs());
    if t >= 0.0 {
        0.5 + 0.5 * e
    } else {
        0.5 - 0.5 * e
    }
}

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&v| v / sum).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

pub fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn vec_scale(v: &[f64], factor: f64) -> Vec<f64> {
    v.iter().map(|x| x * factor).collect()
}

/// a + factor * b
pub fn vec_axpy(a: &[f64], factor: f64, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + factor * y).collect()
}
