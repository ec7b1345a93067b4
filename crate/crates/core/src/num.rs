//! Scalar abstractions shared by the metric and model code.
//!
//! The model math is written once against [`Real`] and instantiated for
//! `f32` and `f64`. Metric ratios go through [`ScoreValue`], which in
//! addition to the float types admits exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive, Zero};

/// Floating point: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Short tag written into checkpoints.
    const TAG: &'static str;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const TAG: &'static str = "f32";
}

impl Real for f64 {
    const TAG: &'static str = "f64";
}

/// A value type able to hold a ROUGE ratio.
pub trait ScoreValue: Clone + PartialOrd + Debug + Send + Sync {
    fn zero() -> Self;
    /// `num / den`; callers guarantee `den > 0`.
    fn from_counts(num: u64, den: u64) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn div_count(&self, n: u64) -> Self;
    fn to_f64(&self) -> f64;
}

macro_rules! float_score {
    ($t:ty) => {
        impl ScoreValue for $t {
            fn zero() -> Self {
                0.0
            }
            fn from_counts(num: u64, den: u64) -> Self {
                num as $t / den as $t
            }
            fn add(&self, other: &Self) -> Self {
                *self + *other
            }
            fn div_count(&self, n: u64) -> Self {
                *self / n as $t
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_score!(f32);
float_score!(f64);

impl ScoreValue for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn from_counts(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn div_count(&self, n: u64) -> Self {
        self / BigRational::from_integer(BigInt::from(n))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_counts_are_exact() {
        let a = BigRational::from_counts(10, 12);
        assert_eq!(a, BigRational::from_counts(5, 6));
        let mean = a.add(&BigRational::from_counts(1, 6)).div_count(2);
        assert_eq!(mean, BigRational::from_counts(1, 2));
    }

    #[test]
    fn float_counts_match_division() {
        assert_eq!(<f64 as ScoreValue>::from_counts(5, 6), 5.0 / 6.0);
        assert_eq!(<f32 as ScoreValue>::from_counts(3, 5), 0.6f32);
    }
}
