//! Scalar abstraction shared by images, embeddings and scores.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating-point storage type: `f32` or `f64`.
///
/// Everything that accumulates (pixel sums, grid statistics, norms) is carried
/// out in `f64` and only the stored result is cast back to `Self`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, panicking only on values `NumCast` cannot represent.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(p / (1 - p))`. Infinite at 0 and 1; callers clip first.
#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_roundtrip() {
        for &p in &[1e-6, 0.1, 0.5, 0.8, 1.0 - 1e-6] {
            let back: f64 = sigmoid(logit(p));
            assert!((back - p).abs() < 1e-12, "{p} -> {back}");
        }
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(-1e9f64), 0.0);
        assert_eq!(sigmoid(1e9f64), 1.0);
        assert!(!sigmoid(f32::MIN).is_nan());
    }
}
