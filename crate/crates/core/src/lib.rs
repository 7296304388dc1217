//! Differentially private learning of parities, the exponential mechanism,
//! and the local/statistical-query equivalence with its masked-parity
//! separation.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod dp;
pub mod error;
pub mod exp_mech;
pub mod gf2;
pub mod harness;
pub mod learning;
pub mod local;
pub mod masked_parity;
pub mod parity;
pub mod scalar;
pub mod sq;

pub use error::{Error, Result};
pub use gf2::{AffineSubspace, BitVector, LinearSystem};
pub use harness::{run_experiment, Params, Report};
pub use learning::{Concept, Database, Example, LabelConvention};
pub use masked_parity::{MaskedDomain, MaskedParity};
pub use parity::Outcome;
pub use scalar::Real;
pub use sq::SqOracle;

pub type ExpMech = exp_mech::ExpMech<f64>;
pub type Distribution = learning::Distribution<f64>;
pub type LabeledDistribution = learning::LabeledDistribution<f64>;
pub type ParityConfig = parity::ParityConfig<f64>;
pub type AmplifiedConfig = parity::AmplifiedConfig<f64>;
pub type AmplifiedOutcome = parity::AmplifiedOutcome<f64>;
pub type FiniteRandomizer<U> = local::FiniteRandomizer<U, f64>;
pub type LaplaceRandomizer<U> = local::LaplaceRandomizer<U, f64>;
pub type Randomizer<U> = local::Randomizer<U, f64>;
pub type LrOracle<U> = local::LrOracle<U, f64>;
pub type SqQuery<U> = sq::SqQuery<U, f64>;

pub type FiniteDistribution<U> = sq::FiniteDistribution<U, f64>;
pub type FourierPieces = masked_parity::FourierPieces<f64>;
pub type Strategy = masked_parity::Strategy<f64>;

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_precision_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = crate::learning::Distribution::<f32>::uniform(4).unwrap();
        let c = crate::Concept::parity("1011".parse().unwrap());
        let cfg = crate::parity::AmplifiedConfig::<f32>::with_constants(0.2, 0.1, 0.5, 0.5, 1.0).unwrap();
        let n = cfg.required_sample_size(4);
        let z = crate::learning::generate_database(&dist, &c, n, crate::LabelConvention::ZeroOne, &mut rng).unwrap();
        let out = crate::parity::learn_amplified(&z, &cfg, &mut rng).unwrap();
        assert_eq!(out.result, crate::Outcome::Parity("1011".parse().unwrap()));
        let (phi, tau) = crate::sq::rejection_parameters(0.5f32, 1, 0.1).unwrap();
        assert!(tau < phi);
        let rr = crate::local::FiniteRandomizer::<bool, f32>::randomized_response(0.5).unwrap();
        let bits = crate::sq::FiniteDistribution::<bool, f32>::new(vec![false, true], vec![0.5, 0.5]).unwrap();
        let law = crate::sq::randomizer_pushforward(&rr, &bits).unwrap();
        assert!((law.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}
