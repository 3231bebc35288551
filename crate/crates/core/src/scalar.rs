//! Numeric abstraction for reward arithmetic.
//!
//! Normalized rewards are ratios of integer reward totals, so they can be
//! computed exactly with rationals or approximately with floats. Everything in
//! [`crate::evaluation`] is generic over [`Scalar`].

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio, Rational64};
use num_traits::{Num, ToPrimitive};

/// A field-like number type that reward ratios can be expressed in.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Exact conversion of a non-negative integer reward.
    fn from_count(n: u64) -> Self;

    /// Lossy view used for display and JSON output.
    fn to_f64(&self) -> f64;
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Rational64 {
    fn from_count(n: u64) -> Self {
        let n = i64::try_from(n).expect("reward count exceeds i64");
        Ratio::from_integer(n)
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl Scalar for BigRational {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(BigInt::from(n))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
