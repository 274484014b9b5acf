//! Dense row-major matrices, vector norms and induced operator norms.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; only matrices get a dedicated type.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap for the spectral-norm power iteration.
pub const POWER_ITER_MAX: usize = 2000;
/// Relative change below which the power iteration stops.
pub const POWER_ITER_TOL: f64 = 1e-14;

/// Norm order of an ℓp ball. Only 1, 2 and ∞ are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

impl NormOrder {
    pub const ALL: [NormOrder; 3] = [NormOrder::L1, NormOrder::L2, NormOrder::Inf];

    /// The Hölder conjugate q with 1/p + 1/q = 1.
    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::L1 => NormOrder::Inf,
            NormOrder::L2 => NormOrder::L2,
            NormOrder::Inf => NormOrder::L1,
        }
    }

    /// Maps a numeric order onto the enum; `f64::INFINITY` selects ∞.
    pub fn from_f64(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(NormOrder::L1)
        } else if p == 2.0 {
            Ok(NormOrder::L2)
        } else if p == f64::INFINITY {
            Ok(NormOrder::Inf)
        } else {
            Err(Error::param(format!(
                "unsupported norm order {p}; expected 1, 2 or inf"
            )))
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
            NormOrder::Inf => "inf",
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "infinity" | "linf" | "∞" => Ok(NormOrder::Inf),
            other => Err(Error::param(format!(
                "unsupported norm order '{other}'; expected 1, 2 or inf"
            ))),
        }
    }
}

/// Free-function form of [`NormOrder::dual`].
pub fn dual_order(p: NormOrder) -> NormOrder {
    p.dual()
}

/// ‖v‖_q.
pub fn vec_qnorm(v: &[f64], q: NormOrder) -> f64 {
    match q {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => {
            // scaled accumulation so huge entries do not overflow the sum of squares
            let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if scale == 0.0 || !scale.is_finite() {
                return scale;
            }
            let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
            scale * s.sqrt()
        }
        NormOrder::Inf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rows * self.cols <= 64 {
            let rows: Vec<&[f64]> = (0..self.rows).map(|r| self.row(r)).collect();
            write!(f, "Matrix{rows:?}")
        } else {
            write!(f, "Matrix({}x{})", self.rows, self.cols)
        }
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
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · diag(d)`, i.e. column `c` scaled by `d[c]`.
    pub fn scale_columns(&self, d: &[f64]) -> Result<Matrix> {
        if d.len() != self.cols {
            return Err(Error::shape("scale_columns", self.cols, d.len()));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, s) in row.iter_mut().zip(d) {
                *x *= s;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        matvec(self, x)
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

/// `a · b`, dispatched to a blocked GEMM kernel.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("inner dimension {}", a.cols),
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    // SAFETY: the pointers cover m*k, k*n and m*n contiguous row-major
    // elements respectively, matching the strides passed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::shape("matvec", a.cols, x.len()));
    }
    Ok(a.row_iter().map(|row| dot(row, x)).collect())
}

/// `xᵀ · a` as a vector of length `a.cols()`.
pub fn vecmat(x: &[f64], a: &Matrix) -> Result<Vec<f64>> {
    if a.rows != x.len() {
        return Err(Error::shape("vecmat", a.rows, x.len()));
    }
    let mut out = vec![0.0; a.cols];
    for (row, &s) in a.row_iter().zip(x) {
        if s == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += s * w;
        }
    }
    Ok(out)
}

/// Induced operator norm ‖W‖_{p→p}.
///
/// ∞ is the max absolute row sum, 1 the max absolute column sum, and 2 the
/// largest singular value from power iteration on WᵀW started at the
/// all-ones vector.
pub fn induced_norm(w: &Matrix, p: NormOrder) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::param("induced norm of an empty matrix"));
    }
    Ok(match p {
        NormOrder::Inf => w
            .row_iter()
            .map(|r| vec_qnorm(r, NormOrder::L1))
            .fold(0.0, f64::max),
        NormOrder::L1 => {
            let mut sums = vec![0.0; w.cols];
            for row in w.row_iter() {
                for (s, x) in sums.iter_mut().zip(row) {
                    *s += x.abs();
                }
            }
            sums.into_iter().fold(0.0, f64::max)
        }
        NormOrder::L2 => spectral_norm(w),
    })
}

fn spectral_norm(w: &Matrix) -> f64 {
    let n = w.cols;
    let sigma = power_iterate(w, vec![1.0; n]);
    if sigma > 0.0 || w.as_slice().iter().all(|&x| x == 0.0) {
        return sigma;
    }
    // The all-ones start was orthogonal to every right singular vector with
    // nonzero singular value; fall back to a fixed non-symmetric start.
    let start: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let sigma = power_iterate(w, start);
    if sigma > 0.0 {
        return sigma;
    }
    // Last resort: the largest column norm is attained by some basis vector.
    (0..n)
        .map(|c| vec_qnorm(&w.column(c), NormOrder::L2))
        .fold(0.0, f64::max)
}

fn power_iterate(w: &Matrix, mut x: Vec<f64>) -> f64 {
    let norm = vec_qnorm(&x, NormOrder::L2);
    x.iter_mut().for_each(|v| *v /= norm);
    let mut sigma = 0.0;
    for _ in 0..POWER_ITER_MAX {
        // y = Wᵀ W x
        let wx = matvec(w, &x).expect("dimensions fixed by construction");
        let y = vecmat(&wx, w).expect("dimensions fixed by construction");
        let ynorm = vec_qnorm(&y, NormOrder::L2);
        if ynorm == 0.0 {
            return 0.0;
        }
        // ‖W x‖ for unit x is the Rayleigh-quotient estimate of σ_max
        let next = vec_qnorm(&wx, NormOrder::L2);
        x = y.into_iter().map(|v| v / ynorm).collect();
        let converged = (next - sigma).abs() <= POWER_ITER_TOL * next;
        sigma = next;
        if converged {
            break;
        }
    }
    // evaluate at the final iterate, which is at least as good as the last estimate
    let wx = matvec(w, &x).expect("dimensions fixed by construction");
    sigma.max(vec_qnorm(&wx, NormOrder::L2))
}
