//! Dense row-major matrix kernel.
//!
//! Products and elementwise arithmetic are hand-written; the SVD, QR and
//! symmetric eigendecomposition are delegated to `nalgebra` and converted
//! back into [`Mat`].

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values at or below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: format!("{} entries for {rows}x{cols}", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        Mat::rect_diag(values.len(), values.len(), values)
    }

    /// `rows x cols` matrix with `values` on the leading diagonal.
    pub fn rect_diag(rows: usize, cols: usize, values: &[f64]) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for (i, &v) in values.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = v;
        }
        m
    }

    /// I.i.d. standard normal entries scaled by `std`.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Mat { rows, cols, data }
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Matrix product `self * rhs`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Mat::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs` without forming the transpose.
    pub fn t_matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "t_matmul: row mismatch");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        let n = rhs.cols;
        for k in 0..self.rows {
            let rhs_row = &rhs.data[k * n..(k + 1) * n];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * rhsᵀ` without forming the transpose.
    pub fn matmul_t(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_t: column mismatch");
        Mat::from_fn(self.rows, rhs.rows, |i, j| dot(self.row(i), rhs.row(j)))
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Frobenius inner product `<self, other> = tr(selfᵀ other)`.
    pub fn inner(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "inner shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Columns `0..k` as a new matrix.
    pub fn leading_cols(&self, k: usize) -> Mat {
        Mat::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    /// Rows `0..k` as a new matrix.
    pub fn leading_rows(&self, k: usize) -> Mat {
        Mat::from_fn(k, self.cols, |i, j| self[(i, j)])
    }

    /// Zero-pads (or truncates) to `rows x cols`.
    pub fn resized(&self, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |i, j| {
            if i < self.rows && j < self.cols {
                self[(i, j)]
            } else {
                0.0
            }
        })
    }

    /// Integer power of a square matrix; `pow(0)` is the identity.
    pub fn pow(&self, k: u32) -> Mat {
        assert!(self.is_square(), "pow of non-square matrix");
        let mut out = Mat::identity(self.rows);
        for _ in 0..k {
            out = out.matmul(self);
        }
        out
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

/// Thin SVD `m = u diag(sigma) vt` with `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub vt: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        reconstruct_with(&self.u, &self.sigma, &self.vt)
    }

    /// Number of singular values above `RANK_TOL * sigma_max`.
    pub fn rank(&self) -> usize {
        let cutoff = RANK_TOL * self.sigma.first().copied().unwrap_or(0.0);
        self.sigma
            .iter()
            .filter(|&&s| s > cutoff && s > 0.0)
            .count()
    }
}

fn reconstruct_with(u: &Mat, sigma: &[f64], vt: &Mat) -> Mat {
    let mut us = u.clone();
    for i in 0..us.rows {
        for (j, s) in sigma.iter().enumerate() {
            us[(i, j)] *= s;
        }
    }
    us.matmul(vt)
}

pub fn svd(m: &Mat) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::Domain("svd of non-finite matrix".into()));
    }
    let k = m.rows.min(m.cols);
    if k == 0 {
        return Ok(SvdResult {
            u: Mat::zeros(m.rows, 0),
            sigma: Vec::new(),
            vt: Mat::zeros(0, m.cols),
        });
    }
    let a = faer::Mat::<f64>::from_fn(m.rows, m.cols, |i, j| m[(i, j)]);
    let decomposition = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD of {}x{} failed: {e:?}", m.rows, m.cols)))?;
    let (fu, fs, fv) = (decomposition.U(), decomposition.S(), decomposition.V());
    let u = Mat::from_fn(m.rows, k, |i, j| fu[(i, j)]);
    let vt = Mat::from_fn(k, m.cols, |i, j| fv[(j, i)]);
    let sigma = (0..k).map(|i| fs[i].max(0.0)).collect();
    Ok(SvdResult { u, sigma, vt })
}

pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    svd(m).map(|s| s.sigma)
}

/// Schatten p-(quasi)norm `(sum sigma_i^p)^(1/p)`.
pub fn schatten_norm(m: &Mat, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!(
            "Schatten exponent must be > 0, got {p}"
        )));
    }
    let sigma = singular_values(m)?;
    let sum: f64 = sigma.iter().map(|s| s.powf(p)).sum();
    Ok(sum.powf(1.0 / p))
}

pub fn nuclear_norm(m: &Mat) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

pub fn rank(m: &Mat) -> Result<usize> {
    Ok(svd(m)?.rank())
}

/// Singular value soft-thresholding: the proximal map of `tau * ||.||_*`.
pub fn svt(m: &Mat, tau: f64) -> Result<Mat> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("threshold must be >= 0, got {tau}")));
    }
    let s = svd(m)?;
    let shrunk: Vec<f64> = s.sigma.iter().map(|x| (x - tau).max(0.0)).collect();
    Ok(reconstruct_with(&s.u, &shrunk, &s.vt))
}

/// Moore-Penrose pseudoinverse with the `RANK_TOL` cutoff.
pub fn pinv(m: &Mat) -> Result<Mat> {
    let s = svd(m)?;
    let cutoff = RANK_TOL * s.sigma.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = s
        .sigma
        .iter()
        .map(|&x| if x > cutoff && x > 0.0 { 1.0 / x } else { 0.0 })
        .collect();
    // pinv = V diag(1/sigma) Uᵀ
    Ok(reconstruct_with(&s.vt.transpose(), &inv, &s.u.transpose()))
}

/// Symmetric PSD square root. Negative eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.rows, m.cols),
        });
    }
    let sym = Mat::from_fn(m.rows, m.cols, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = nalgebra::SymmetricEigen::new(sym.to_na());
    let q = Mat::from_na(&eig.eigenvectors);
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(reconstruct_with(&q, &roots, &q.transpose()))
}

/// `rows x k` matrix with orthonormal columns from the QR of a Gaussian draw.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, k: usize, rng: &mut R) -> Result<Mat> {
    if k > rows {
        return Err(Error::Domain(format!(
            "cannot fit {k} orthonormal columns in dimension {rows}"
        )));
    }
    let g = Mat::gaussian(rows, k, 1.0, rng);
    let q = g.to_na().qr().q();
    Ok(Mat::from_na(&q).leading_cols(k))
}

/// Cholesky factor `G = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: Mat,
}

impl Cholesky {
    /// Fails with [`Error::RankDeficient`] when a pivot drops to
    /// `RANK_TOL * max diag` or below.
    pub fn factor(g: &Mat) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::Shape {
                expected: "square Gram matrix".into(),
                got: format!("{}x{}", g.rows, g.cols),
            });
        }
        let n = g.rows;
        let scale = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max);
        let floor = RANK_TOL * scale.max(f64::MIN_POSITIVE);
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let pivot = g[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(pivot > floor) {
                return Err(Error::RankDeficient { index: j, pivot });
            }
            let root = pivot.sqrt();
            l[(j, j)] = root;
            for i in j + 1..n {
                let v = g[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = v / root;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(rhs.len(), n, "rhs length mismatch");
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (rhs[i] - dot(&l.row(i)[..i], &y[..i])) / l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

/// Solves `G x = rhs` for symmetric positive-definite `G`.
pub fn gram_solve(gram: &Mat, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != gram.rows {
        return Err(Error::Shape {
            expected: format!("rhs of length {}", gram.rows),
            got: format!("length {}", rhs.len()),
        });
    }
    Ok(Cholesky::factor(gram)?.solve(rhs))
}
