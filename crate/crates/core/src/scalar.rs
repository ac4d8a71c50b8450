use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the model is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants in the numerics are written as `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    /// Logistic function `1 / (1 + e^-x)`, evaluated without overflow.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `log σ(x)`, stable for large |x|.
    #[inline]
    fn log_sigmoid(self) -> Self {
        if self >= Self::zero() {
            -(-self).exp().ln_1p()
        } else {
            self - self.exp().ln_1p()
        }
    }

    /// `ln(1 + e^x)`.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Inverse of [`Scalar::softplus`] for positive `self`.
    #[inline]
    fn softplus_inv(self) -> Self {
        // ln(e^y - 1) = y + ln(1 - e^-y)
        self + (-(-self).exp()).ln_1p()
    }

    /// Inverse of [`Scalar::sigmoid`]; maps 0 and 1 to -inf and +inf.
    #[inline]
    fn logit(self) -> Self {
        (self / (Self::one() - self)).ln()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
