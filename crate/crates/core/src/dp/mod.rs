//! Differential-privacy primitives.

pub mod bounds;
pub mod budget;
pub mod laplace;
pub mod verify;

pub use bounds::{chernoff_mult, hoeffding, laplace_sum};
pub use budget::{compose, BudgetLedger};
pub use laplace::{laplace_mechanism, laplace_sample, Laplace};
pub use verify::{empirical_privacy_ratio, FiniteMechanism, PrivacyReport, VerifyMode};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A pure privacy parameter `ε > 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct PrivacyParams<T = f64> {
    epsilon: T,
}

impl<T: Real> PrivacyParams<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::param("epsilon", format!("must be positive and finite, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }
}
