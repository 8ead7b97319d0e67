//! Dense matrices and rank-3 tensors.
//!
//! Just enough linear algebra for the pipeline: row-major storage, matrix
//! products with 64-bit accumulation, temperature softmax, log-sum-exp, and
//! seeded Gaussian fills. No broadcasting — every shape mismatch is an error.

use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream, StreamId};
use crate::scalar::Scalar;
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds from a flat row-major buffer; length must match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("expected {} values for {rows}x{cols}, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    /// Standard-normal entries, deterministic per seed.
    pub fn seeded_gaussian(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = stream(seed, StreamId::Gaussian);
        Self::gaussian_from(&mut rng, rows, cols)
    }

    /// Standard-normal entries drawn from the given generator.
    pub fn gaussian_from(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let data = (0..rows * cols).map(|_| T::from_f64_lossy(standard_normal(rng))).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Matrix-vector product `self · v`, accumulated in f64.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("{}x{} by vector of length {}", self.rows, self.cols, v.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|r| {
                let acc: f64 = self
                    .row(r)
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a.to_f64_lossy() * b.to_f64_lossy())
                    .sum();
                T::from_f64_lossy(acc)
            })
            .collect())
    }

    /// Transposed matrix-vector product `selfᵀ · v`, accumulated in f64.
    pub fn tr_matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "tr_matvec",
                format!("{}x{} transposed by vector of length {}", self.rows, self.cols, v.len()),
            ));
        }
        let mut acc = vec![0.0f64; self.cols];
        for r in 0..self.rows {
            let w = v[r].to_f64_lossy();
            for (a, &x) in acc.iter_mut().zip(self.row(r)) {
                *a += w * x.to_f64_lossy();
            }
        }
        Ok(acc.into_iter().map(T::from_f64_lossy).collect())
    }

    /// Accumulates `scale · other` into self; shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix<T>, scale: T) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "add_scaled",
                format!("{}x{} += {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// True when all entries are finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product with f64 accumulation; shapes must agree.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += a.get(i, k).to_f64_lossy() * b.get(k, j).to_f64_lossy();
            }
            out.set(i, j, T::from_f64_lossy(acc));
        }
    }
    Ok(out)
}

/// Temperature softmax applied to every row, with max-subtraction so huge
/// logits cannot overflow.
pub fn softmax_rows<T: Scalar>(m: &Matrix<T>, temperature: T) -> Result<Matrix<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_row_in_place(out.row_mut(r), temperature);
    }
    Ok(out)
}

fn softmax_row_in_place<T: Scalar>(row: &mut [T], temperature: T) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax of one logit vector at temperature 1.
pub fn softmax_vec<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut out = xs.to_vec();
    softmax_row_in_place(&mut out, T::one());
    out
}

/// log Σᵢ exp(xᵢ), stabilized by max-subtraction.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().cloned().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Rank-3 tensor holding per-frame token features: `t` frames of `n` tokens,
/// each a length-`d` row. Row-major in (frame, token, channel) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    t: usize,
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(t: usize, n: usize, d: usize) -> Self {
        Tensor3 { t, n, d, data: vec![T::zero(); t * n * d] }
    }

    pub fn from_vec(t: usize, n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != t * n * d {
            return Err(Error::shape(
                "tensor3_from_vec",
                format!("expected {} values for {t}x{n}x{d}, got {}", t * n * d, data.len()),
            ));
        }
        Ok(Tensor3 { t, n, d, data })
    }

    /// Standard-normal entries, deterministic per seed.
    pub fn seeded_gaussian(t: usize, n: usize, d: usize, seed: u64) -> Self {
        let mut rng = stream(seed, StreamId::Gaussian);
        Self::gaussian_from(&mut rng, t, n, d)
    }

    /// Standard-normal entries drawn from the given generator.
    pub fn gaussian_from(rng: &mut ChaCha8Rng, t: usize, n: usize, d: usize) -> Self {
        let data = (0..t * n * d).map(|_| T::from_f64_lossy(standard_normal(rng))).collect();
        Tensor3 { t, n, d, data }
    }

    /// (frames, tokens per frame, feature width).
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.n, self.d)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, c: usize) -> T {
        debug_assert!(k < self.t && i < self.n && c < self.d);
        self.data[(k * self.n + i) * self.d + c]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, c: usize, v: T) {
        debug_assert!(k < self.t && i < self.n && c < self.d);
        self.data[(k * self.n + i) * self.d + c] = v;
    }

    /// Feature row of token `i` in frame `k` (both 0-based).
    pub fn token(&self, k: usize, i: usize) -> &[T] {
        let start = (k * self.n + i) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn token_mut(&mut self, k: usize, i: usize) -> &mut [T] {
        let start = (k * self.n + i) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// Copy of frame `k` (0-based) as an n×d matrix.
    pub fn frame(&self, k: usize) -> Matrix<T> {
        let start = k * self.n * self.d;
        Matrix { rows: self.n, cols: self.d, data: self.data[start..start + self.n * self.d].to_vec() }
    }

    /// Flattens frames in temporal order into a (t·n)×d matrix.
    pub fn flatten(&self) -> Matrix<T> {
        Matrix { rows: self.t * self.n, cols: self.d, data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor3 { t: self.t, n: self.n, d: self.d, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Accumulates `scale · other` into self; dims must match.
    pub fn add_scaled(&mut self, other: &Tensor3<T>, scale: T) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "tensor3_add_scaled",
                format!("{:?} += {:?}", self.dims(), other.dims()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Rounds every entry through IEEE binary32, matching on-disk precision.
    pub fn quantize_f32(&self) -> Self {
        self.map(|v| T::from_f64_lossy(v.to_f64_lossy() as f32 as f64))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
