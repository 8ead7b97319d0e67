//! The residual feature disruptor.
//!
//! A tokenwise two-layer GELU MLP whose output is added back onto the input:
//! `h_neg = h + M(h)`. With zero weights it is exactly the identity; trained
//! weights steer features toward cycle-inconsistent, answer-misaligned
//! states. No cross-token mixing happens here — temporal structure enters
//! only through the losses.

use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};
use crate::scalar::{gelu, gelu_grad, Scalar};
use crate::tensor::{Matrix, Tensor3};

/// Initialization scale; small enough that a fresh disruptor barely moves
/// unit-norm features.
const INIT_STD: f64 = 1e-2;

/// Trainable weights of the perturbation MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DisruptorParams<T> {
    w1: Matrix<T>,
    b1: Vec<T>,
    w2: Matrix<T>,
    b2: Vec<T>,
}

impl<T: Scalar> DisruptorParams<T> {
    /// Feature width the disruptor operates on.
    pub fn d(&self) -> usize {
        self.w1.rows()
    }

    /// Hidden width.
    pub fn d_h(&self) -> usize {
        self.w1.cols()
    }

    /// Default hidden width for a given feature width: d/2, at least 2.
    pub fn default_hidden(d: usize) -> usize {
        (d / 2).max(2)
    }

    /// All-zero parameters; `disrupt` becomes the identity map.
    pub fn zeros(d: usize, d_h: usize) -> Self {
        DisruptorParams {
            w1: Matrix::zeros(d, d_h),
            b1: vec![T::zero(); d_h],
            w2: Matrix::zeros(d_h, d),
            b2: vec![T::zero(); d],
        }
    }

    /// Total number of trainable values.
    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.d(), self.d_h())
    }

    pub fn param_count_for(d: usize, d_h: usize) -> usize {
        d * d_h + d_h + d_h * d + d
    }

    /// Flat layout: w1 row-major, b1, w2 row-major, b2.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out
    }

    /// Rebuilds parameters from the flat layout.
    pub fn from_flat(d: usize, d_h: usize, values: &[T]) -> Result<Self> {
        let expected = Self::param_count_for(d, d_h);
        if values.len() != expected {
            return Err(Error::shape(
                "disruptor_from_flat",
                format!("expected {expected} values for d={d}, d_h={d_h}, got {}", values.len()),
            ));
        }
        let (w1, rest) = values.split_at(d * d_h);
        let (b1, rest) = rest.split_at(d_h);
        let (w2, b2) = rest.split_at(d_h * d);
        Ok(DisruptorParams {
            w1: Matrix::from_vec(d, d_h, w1.to_vec())?,
            b1: b1.to_vec(),
            w2: Matrix::from_vec(d_h, d, w2.to_vec())?,
            b2: b2.to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }
}

/// Small Gaussian initialization (std 1e-2), deterministic per seed, in flat
/// parameter order.
pub fn init_disruptor<T: Scalar>(d: usize, d_h: usize, seed: u64) -> Result<DisruptorParams<T>> {
    if d < 2 || d_h < 2 {
        return Err(Error::Parameter(format!(
            "disruptor dims must be at least 2, got d={d}, d_h={d_h}"
        )));
    }
    let mut rng = stream(seed, StreamId::Disruptor);
    let std = T::from_f64_lossy(INIT_STD);
    let scale = |m: Matrix<T>| m.map(|v| v * std);
    let w1 = scale(Matrix::gaussian_from(&mut rng, d, d_h));
    let b1 = Matrix::<T>::gaussian_from(&mut rng, 1, d_h).data().iter().map(|&v| v * std).collect();
    let w2 = scale(Matrix::gaussian_from(&mut rng, d_h, d));
    let b2 = Matrix::<T>::gaussian_from(&mut rng, 1, d).data().iter().map(|&v| v * std).collect();
    Ok(DisruptorParams { w1, b1, w2, b2 })
}

/// The raw perturbation M(h) = w2ᵀ·gelu(w1ᵀ·h + b1) + b2 for one token.
pub fn perturbation<T: Scalar>(params: &DisruptorParams<T>, h_tok: &[T]) -> Result<Vec<T>> {
    if h_tok.len() != params.d() {
        return Err(Error::shape(
            "perturbation",
            format!("token width {} does not match disruptor d={}", h_tok.len(), params.d()),
        ));
    }
    let mut pre = params.w1.tr_matvec(h_tok)?;
    for (p, &b) in pre.iter_mut().zip(&params.b1) {
        *p += b;
    }
    let act: Vec<T> = pre.into_iter().map(gelu).collect();
    let mut out = params.w2.tr_matvec(&act)?;
    for (o, &b) in out.iter_mut().zip(&params.b2) {
        *o += b;
    }
    Ok(out)
}

/// Residual perturbation of every token: output = input + M(input).
pub fn disrupt<T: Scalar>(h: &Tensor3<T>, params: &DisruptorParams<T>) -> Result<Tensor3<T>> {
    let (t, n, d) = h.dims();
    if d != params.d() {
        return Err(Error::shape(
            "disrupt",
            format!("feature width {d} does not match disruptor d={}", params.d()),
        ));
    }
    let mut out = h.clone();
    for k in 0..t {
        for i in 0..n {
            let m = perturbation(params, h.token(k, i))?;
            for (o, dm) in out.token_mut(k, i).iter_mut().zip(m) {
                *o += dm;
            }
        }
    }
    Ok(out)
}

/// Backpropagates an upstream gradient on the disrupted tensor into flat
/// parameter gradients. The residual input path carries no parameter
/// dependence, so only M's weights accumulate.
pub fn disrupt_backward<T: Scalar>(
    h: &Tensor3<T>,
    params: &DisruptorParams<T>,
    upstream: &Tensor3<T>,
) -> Result<Vec<T>> {
    let (t, n, d) = h.dims();
    if upstream.dims() != h.dims() {
        return Err(Error::shape(
            "disrupt_backward",
            format!("upstream dims {:?} do not match features {:?}", upstream.dims(), h.dims()),
        ));
    }
    if d != params.d() {
        return Err(Error::shape(
            "disrupt_backward",
            format!("feature width {d} does not match disruptor d={}", params.d()),
        ));
    }
    let d_h = params.d_h();
    let mut grad = vec![T::zero(); params.param_count()];
    let (w1_off, b1_off, w2_off, b2_off) =
        (0, d * d_h, d * d_h + d_h, d * d_h + d_h + d_h * d);

    for k in 0..t {
        for i in 0..n {
            let x = h.token(k, i);
            let gy = upstream.token(k, i);

            let mut pre = params.w1.tr_matvec(x)?;
            for (p, &b) in pre.iter_mut().zip(&params.b1) {
                *p += b;
            }
            let act: Vec<T> = pre.iter().map(|&p| gelu(p)).collect();

            // b2 and w2: out_c = Σ_j w2[j][c]·act_j + b2_c.
            for c in 0..d {
                grad[b2_off + c] += gy[c];
            }
            for j in 0..d_h {
                for c in 0..d {
                    grad[w2_off + j * d + c] += act[j] * gy[c];
                }
            }
            // Through the activation into the first layer.
            let g_act = params.w2.matvec(gy)?;
            for j in 0..d_h {
                let g_pre = g_act[j] * gelu_grad(pre[j]);
                grad[b1_off + j] += g_pre;
                for c in 0..d {
                    grad[w1_off + c * d_h + j] += x[c] * g_pre;
                }
            }
        }
    }
    Ok(grad)
}
