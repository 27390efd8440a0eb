//! Dense matrix primitives used by the rest of the pipeline.
//!
//! Two conventions are fixed here and relied on everywhere else:
//!
//! * Pixel scan order is row-major: the patch centred on pixel `(r, c)` of an
//!   `m x n` image lands in column `r * n + c`.
//! * Within a `k1 x k2` window, entries are vectorised column-major: window
//!   offset `(dr, dc)` maps to row `dc * k1 + dr`. Filters are reshaped from
//!   eigenvectors with the same rule (see [`Matrix::from_column_major`]), so
//!   [`correlate_same`] at a pixel equals the dot product of that pixel's
//!   patch column with the vectorised filter.
//!
//! Windows are zero-padded by `(k1 - 1) / 2` rows and `(k2 - 1) / 2` columns,
//! so every pixel owns exactly one patch and filtered outputs keep the input
//! size. Filtering is a sliding inner product (no kernel flip); PCA filters
//! are only defined up to sign and orientation anyway, and no energy or error
//! figure depends on the flip.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A single grayscale image.
pub type ImageMatrix = Matrix;

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(12) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            writeln!(f, "  {:?}", &row[..row.len().min(12)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::precondition(
                "data",
                format!("expected {} values for {rows}x{cols}, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test and literal use).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Inverse of [`Matrix::to_column_major`]: `mat_{k1,k2}` for filters.
    pub fn from_column_major(rows: usize, cols: usize, v: &[f64]) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(Error::precondition(
                "vector",
                format!("length {} cannot be reshaped to {rows}x{cols}", v.len()),
            ));
        }
        let mut m = Matrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = v[c * rows + r];
            }
        }
        Ok(m)
    }

    pub fn to_column_major(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self[(r, c)]);
            }
        }
        v
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::precondition(
                "rhs",
                format!("cannot multiply {}x{} by {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `A * A^T`, filled symmetrically.
    pub fn gram(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            let ri = self.row(i);
            for j in i..n {
                let s: f64 = ri.iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                g[(i, j)] = s;
                g[(j, i)] = s;
            }
        }
        g
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Entrywise `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

fn check_window(image: &Matrix, k1: usize, k2: usize, what: &str) -> Result<()> {
    let (m, n) = image.shape();
    for (name, k, lim) in [("k1", k1, m), ("k2", k2, n)] {
        if k % 2 == 0 {
            return Err(Error::precondition(name, format!("{what} size {k} must be odd")));
        }
        if k < 1 || k > lim {
            return Err(Error::precondition(
                name,
                format!("{what} size {k} must lie in 1..={lim} for a {m}x{n} image"),
            ));
        }
    }
    Ok(())
}

/// Zero-padded im2col: one `k1*k2` column per pixel.
pub fn extract_patches(image: &Matrix, k1: usize, k2: usize) -> Result<Matrix> {
    check_window(image, k1, k2, "patch")?;
    let (m, n) = image.shape();
    let (p1, p2) = ((k1 - 1) / 2, (k2 - 1) / 2);
    let cols = m * n;
    let mut out = Matrix::zeros(k1 * k2, cols);
    for r in 0..m {
        for c in 0..n {
            let j = r * n + c;
            for dc in 0..k2 {
                let Some(cc) = (c + dc).checked_sub(p2).filter(|&x| x < n) else {
                    continue;
                };
                for dr in 0..k1 {
                    let Some(rr) = (r + dr).checked_sub(p1).filter(|&x| x < m) else {
                        continue;
                    };
                    out.data[(dc * k1 + dr) * cols + j] = image[(rr, cc)];
                }
            }
        }
    }
    Ok(out)
}

/// Subtracts the mean column from every column.
pub fn remove_patch_mean(patches: &Matrix) -> Result<Matrix> {
    if patches.is_empty() {
        return Err(Error::precondition("patches", "matrix is empty"));
    }
    let mut out = patches.clone();
    let n = patches.cols as f64;
    for r in 0..patches.rows {
        let row = &mut out.data[r * patches.cols..(r + 1) * patches.cols];
        let mean = row.iter().sum::<f64>() / n;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    Ok(out)
}

/// Same-size sliding inner product with zero padding.
pub fn correlate_same(image: &Matrix, filter: &Matrix) -> Result<Matrix> {
    let (k1, k2) = filter.shape();
    check_window(image, k1, k2, "filter")?;
    let (m, n) = image.shape();
    let (p1, p2) = ((k1 - 1) / 2, (k2 - 1) / 2);
    let mut out = Matrix::zeros(m, n);
    // Accumulate in the same (dc, dr) order as the patch vectorisation so the
    // result matches a patch/filter dot product bit for bit.
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for dc in 0..k2 {
                let Some(cc) = (c + dc).checked_sub(p2).filter(|&x| x < n) else {
                    continue;
                };
                for dr in 0..k1 {
                    let Some(rr) = (r + dr).checked_sub(p1).filter(|&x| x < m) else {
                        continue;
                    };
                    acc += image[(rr, cc)] * filter[(dr, dc)];
                }
            }
            out[(r, c)] = acc;
        }
    }
    Ok(out)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Cyclic Jacobi eigensolver for small dense symmetric matrices.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||A||_F`, at most 100 sweeps.
pub fn eigh_symmetric(sym: &Matrix) -> Result<EigenDecomposition> {
    let n = sym.rows;
    if sym.cols != n {
        return Err(Error::precondition(
            "matrix",
            format!("eigh needs a square matrix, got {}x{}", sym.rows, sym.cols),
        ));
    }
    if !sym.is_finite() {
        return Err(Error::precondition("matrix", "contains non-finite entries"));
    }
    let scale = sym.max_abs().max(1.0);
    let mut a = sym.clone();
    for i in 0..n {
        for j in i + 1..n {
            let d = (sym[(i, j)] - sym[(j, i)]).abs();
            if d > SYMMETRY_TOL * scale {
                return Err(Error::precondition(
                    "matrix",
                    format!("not symmetric: |a[{i},{j}] - a[{j},{i}]| = {d:e}"),
                ));
            }
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let norm = a.frobenius();
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= JACOBI_TOL * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
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
    if !converged && off(&a) > JACOBI_TOL * norm {
        return Err(Error::Domain(format!(
            "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

const PIVOT_TOL: f64 = 1e-12;

/// Linear least squares through the normal equations.
///
/// Design columns are scaled to unit norm before forming `D^T D`, so the
/// pivot threshold is independent of the units of each regressor.
pub fn least_squares(design: &Matrix, targets: &[f64]) -> Result<Vec<f64>> {
    let (rows, p) = design.shape();
    if targets.len() != rows {
        return Err(Error::precondition(
            "targets",
            format!("expected {rows} targets, got {}", targets.len()),
        ));
    }
    if p == 0 || rows < p {
        return Err(Error::precondition(
            "design",
            format!("need rows >= cols >= 1, got {rows}x{p}"),
        ));
    }
    let col_norm: Vec<f64> = (0..p)
        .map(|c| (0..rows).map(|r| design[(r, c)].powi(2)).sum::<f64>().sqrt())
        .collect();
    if let Some(c) = col_norm.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::Singular(format!("design column {c} is zero or non-finite")));
    }

    // Augmented normal system [D^T D | D^T y] in scaled coordinates.
    let mut aug = Matrix::zeros(p, p + 1);
    for i in 0..p {
        for j in i..p {
            let s: f64 = (0..rows).map(|r| design[(r, i)] * design[(r, j)]).sum::<f64>()
                / (col_norm[i] * col_norm[j]);
            aug[(i, j)] = s;
            aug[(j, i)] = s;
        }
        aug[(i, p)] =
            (0..rows).map(|r| design[(r, i)] * targets[r]).sum::<f64>() / col_norm[i];
    }

    for k in 0..p {
        let piv = (k..p)
            .max_by(|&a, &b| aug[(a, k)].abs().total_cmp(&aug[(b, k)].abs()))
            .unwrap_or(k);
        if aug[(piv, k)].abs() < PIVOT_TOL {
            return Err(Error::Singular(format!(
                "normal matrix is rank deficient (pivot {:e} at column {k})",
                aug[(piv, k)].abs()
            )));
        }
        if piv != k {
            for c in 0..=p {
                let tmp = aug[(k, c)];
                aug[(k, c)] = aug[(piv, c)];
                aug[(piv, c)] = tmp;
            }
        }
        for r in k + 1..p {
            let f = aug[(r, k)] / aug[(k, k)];
            if f == 0.0 {
                continue;
            }
            for c in k..=p {
                aug[(r, c)] -= f * aug[(k, c)];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = aug[(k, p)];
        for c in k + 1..p {
            s -= aug[(k, c)] * beta[c];
        }
        beta[k] = s / aug[(k, k)];
    }
    Ok(beta.iter().zip(&col_norm).map(|(b, s)| b / s).collect())
}
