//! Scalar abstraction for the numeric core.
//!
//! Everything numerical in this crate is generic over [`Scalar`] so the same
//! code runs at `f32` or `f64`. The shipped pipeline instantiates at `f64`
//! (see the [`crate::Real`] alias); 32-bit floats only appear at the feature
//! file boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 constant")
    }

    /// Converts to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const GELU_CUBIC: f64 = 0.044715;

/// Smooth GELU nonlinearity (tanh form).
///
/// `gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`. The gradient
/// is nonzero everywhere, which keeps finite-difference checks well behaved.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_CUBIC);
    let half = T::from_f64_lossy(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (T::one() + inner.tanh())
}

/// Exact derivative of [`gelu`].
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_CUBIC);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    let inner_grad = c * (T::one() + three * k * x * x);
    half * (T::one() + th) + half * x * sech2 * inner_grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_is_zero_at_zero() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(gelu(0.0f32), 0.0);
    }

    #[test]
    fn gelu_grad_matches_central_differences() {
        let eps = 1e-6f64;
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.2, 1.5, 4.0] {
            let numeric = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            let analytic = gelu_grad(x);
            assert!(
                (numeric - analytic).abs() < 1e-8,
                "gelu'({x}) analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn gelu_approaches_identity_for_large_inputs() {
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0f64).abs() < 1e-9);
    }
}
