//! Numeric abstraction shared by the metric and policy code.
//!
//! Every rate reported by the evaluator is a ratio of counts, and every score
//! comparison is an ordering test, so the arithmetic can run over binary floats
//! for production use or over exact rationals when results must be compared
//! without rounding.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar type usable for scores and metric values.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Converts an `f64`, returning `None` for non-finite input.
    fn from_f64(value: f64) -> Option<Self>;

    fn to_f64(&self) -> f64;

    /// `numerator / denominator` for counts. `denominator` must be non-zero.
    fn ratio(numerator: u64, denominator: u64) -> Self;

    fn from_count(count: u64) -> Self {
        Self::ratio(count, 1)
    }

    /// Sum with error compensation where the representation is inexact.
    fn sum<I: IntoIterator<Item = Self>>(values: I) -> Self;

    fn is_finite(&self) -> bool;
}

/// Floating point scalar: `f32` or `f64`.
pub trait FloatScalar: Scalar + num_traits::Float {}

macro_rules! impl_float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn from_f64(value: f64) -> Option<Self> {
                if value.is_finite() {
                    Some(value as $t)
                } else {
                    None
                }
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }

            fn ratio(numerator: u64, denominator: u64) -> Self {
                debug_assert!(denominator != 0);
                (numerator as f64 / denominator as f64) as $t
            }

            // Neumaier's variant of Kahan summation.
            fn sum<I: IntoIterator<Item = Self>>(values: I) -> Self {
                let mut total: $t = 0.0;
                let mut compensation: $t = 0.0;
                for v in values {
                    let t = total + v;
                    if total.abs() >= v.abs() {
                        compensation += (total - t) + v;
                    } else {
                        compensation += (v - t) + total;
                    }
                    total = t;
                }
                total + compensation
            }

            fn is_finite(&self) -> bool {
                <$t>::is_finite(*self)
            }
        }

        impl FloatScalar for $t {}
    )*};
}

impl_float_scalar!(f32, f64);

impl Scalar for BigRational {
    fn from_f64(value: f64) -> Option<Self> {
        BigRational::from_float(value)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn ratio(numerator: u64, denominator: u64) -> Self {
        debug_assert!(denominator != 0);
        BigRational::new(
            BigInt::from_u64(numerator).expect("u64 fits BigInt"),
            BigInt::from_u64(denominator).expect("u64 fits BigInt"),
        )
    }

    fn sum<I: IntoIterator<Item = Self>>(values: I) -> Self {
        values
            .into_iter()
            .fold(BigRational::from_integer(BigInt::from(0)), |a, b| a + b)
    }

    fn is_finite(&self) -> bool {
        true
    }
}

/// Exact rational scalar.
pub type Exact = BigRational;

/// Rounds `value` to `decimals` places, ties to even.
pub fn round_half_even(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale).round_ties_even() / scale
}
