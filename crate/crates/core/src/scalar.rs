//! Scalar abstraction shared by every probability-valued computation.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used for probabilities, privacy parameters and errors.
///
/// Implemented for `f32` and `f64`. Everything in this crate is written
/// against this trait; the crate root re-exports `f64` aliases for the
/// common case.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + serde::Serialize + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable
    /// at all, which cannot happen for `f32`/`f64`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative slack used when checking analytic inequalities in this type.
    fn check_eps() -> Self;
}

impl Real for f64 {
    fn check_eps() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn check_eps() -> Self {
        1e-5
    }
}

/// Draws a uniform value in the open interval (0, 1).
pub(crate) fn open01<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let u: f64 = rng.sample(rand::distributions::Open01);
    T::lit(u)
}

/// Draws a uniform value in [0, 1).
pub(crate) fn unit<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let u: f64 = rng.gen();
    T::lit(u)
}

/// Inverse-CDF draw from an (unnormalised is not allowed) probability vector.
/// Falls back to the last positive entry when rounding leaves `u` above the
/// accumulated mass.
pub(crate) fn sample_index<T: Real, R: rand::Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: T = unit(rng);
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > T::zero())
        .unwrap_or(probs.len().saturating_sub(1))
}
