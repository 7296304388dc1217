//! Empirical and exact checks of the ε-DP inequality on finite outcome sets.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A randomized map from databases of type `D` to a finite outcome set.
pub trait FiniteMechanism<D: ?Sized, T: Real> {
    type Outcome: Clone + PartialEq + std::fmt::Debug;

    /// Declared outcome set on input `db`. Neighbors must agree on it.
    fn outcome_space(&self, db: &D) -> Vec<Self::Outcome>;

    /// Exact output distribution aligned with [`Self::outcome_space`], if the
    /// mechanism can compute it.
    fn exact_distribution(&self, _db: &D) -> Option<Result<Vec<T>>> {
        None
    }

    fn sample<R: Rng + ?Sized>(&self, db: &D, rng: &mut R) -> Result<Self::Outcome>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VerifyMode {
    Exact,
    MonteCarlo { trials: usize },
}

/// Outcome counts below this are too small for a meaningful ratio.
pub const MIN_RELIABLE_COUNT: usize = 25;

#[derive(Clone, Debug, Serialize)]
pub struct PrivacyReport<T = f64> {
    /// `max_w max(p(w)/p'(w), p'(w)/p(w))`; infinite if some outcome is
    /// possible on one side only.
    pub max_ratio: T,
    pub worst_outcome: Option<usize>,
    pub mode: VerifyMode,
    /// Monte-Carlo only: true if any outcome was observed fewer than
    /// [`MIN_RELIABLE_COUNT`] times on either side.
    pub inconclusive: bool,
    pub min_count: Option<usize>,
}

impl<T: Real> PrivacyReport<T> {
    pub fn epsilon_hat(&self) -> T {
        self.max_ratio.ln()
    }

    pub fn within(&self, epsilon: T) -> bool {
        self.max_ratio <= epsilon.exp() * (T::one() + T::check_eps())
    }

    /// Confidence note for Monte-Carlo estimates.
    pub fn note(&self) -> String {
        match self.mode {
            VerifyMode::Exact => "exact".to_string(),
            VerifyMode::MonteCarlo { trials } => format!(
                "montecarlo: {trials} trials per database, add-one smoothing, min count {}{}",
                self.min_count.unwrap_or(0),
                if self.inconclusive { " (inconclusive)" } else { "" }
            ),
        }
    }
}

fn symmetric_max_ratio<T: Real>(p: &[T], q: &[T]) -> (T, Option<usize>) {
    let mut worst = (T::one(), None);
    for (w, (&a, &b)) in p.iter().zip(q).enumerate() {
        let r = if a == T::zero() && b == T::zero() {
            continue;
        } else if a == T::zero() || b == T::zero() {
            T::infinity()
        } else {
            (a / b).max(b / a)
        };
        if worst.1.is_none() || r > worst.0 {
            worst = (r, Some(w));
        }
    }
    worst
}

/// Largest likelihood ratio of `mechanism` between the neighbors `z` and `z2`,
/// taken over both orderings.
pub fn empirical_privacy_ratio<D, T, M, R>(
    mechanism: &M,
    z: &D,
    z2: &D,
    mode: VerifyMode,
    rng: &mut R,
) -> Result<PrivacyReport<T>>
where
    D: ?Sized,
    T: Real,
    M: FiniteMechanism<D, T>,
    R: Rng + ?Sized,
{
    let space = mechanism.outcome_space(z);
    if space != mechanism.outcome_space(z2) {
        return Err(Error::OutcomeSpaceMismatch);
    }
    match mode {
        VerifyMode::Exact => {
            let p = mechanism
                .exact_distribution(z)
                .ok_or_else(|| Error::param("mode", "mechanism has no exact distribution"))??;
            let q = mechanism
                .exact_distribution(z2)
                .ok_or_else(|| Error::param("mode", "mechanism has no exact distribution"))??;
            let (max_ratio, worst_outcome) = symmetric_max_ratio(&p, &q);
            Ok(PrivacyReport { max_ratio, worst_outcome, mode, inconclusive: false, min_count: None })
        }
        VerifyMode::MonteCarlo { trials } => {
            if trials == 0 {
                return Err(Error::param("trials", "must be positive"));
            }
            let mut counts = [vec![0usize; space.len()], vec![0usize; space.len()]];
            for (side, db) in [z, z2].into_iter().enumerate() {
                for _ in 0..trials {
                    let o = mechanism.sample(db, rng)?;
                    let w = space
                        .iter()
                        .position(|s| *s == o)
                        .ok_or_else(|| Error::param("outcome", format!("{o:?} outside declared space")))?;
                    counts[side][w] += 1;
                }
            }
            let denom = T::from_usize_lossy(trials + space.len());
            let smooth = |c: &Vec<usize>| -> Vec<T> {
                c.iter().map(|&k| T::from_usize_lossy(k + 1) / denom).collect()
            };
            let (max_ratio, worst_outcome) = symmetric_max_ratio(&smooth(&counts[0]), &smooth(&counts[1]));
            let min_count = counts.iter().flatten().copied().min();
            Ok(PrivacyReport {
                max_ratio,
                worst_outcome,
                mode,
                inconclusive: min_count.is_some_and(|m| m < MIN_RELIABLE_COUNT),
                min_count,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::Laplace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Reports a single private bit truthfully with probability `keep`.
    struct BitResponse {
        keep: f64,
    }

    impl FiniteMechanism<bool, f64> for BitResponse {
        type Outcome = bool;
        fn outcome_space(&self, _: &bool) -> Vec<bool> {
            vec![false, true]
        }
        fn exact_distribution(&self, db: &bool) -> Option<Result<Vec<f64>>> {
            let p_true = if *db { self.keep } else { 1.0 - self.keep };
            Some(Ok(vec![1.0 - p_true, p_true]))
        }
        fn sample<R: Rng + ?Sized>(&self, db: &bool, rng: &mut R) -> Result<bool> {
            Ok(if rng.gen_bool(self.keep) { *db } else { !*db })
        }
    }

    struct Constant;
    impl FiniteMechanism<bool, f64> for Constant {
        type Outcome = u8;
        fn outcome_space(&self, _: &bool) -> Vec<u8> {
            vec![7]
        }
        fn exact_distribution(&self, _: &bool) -> Option<Result<Vec<f64>>> {
            Some(Ok(vec![1.0]))
        }
        fn sample<R: Rng + ?Sized>(&self, _: &bool, _: &mut R) -> Result<u8> {
            Ok(7)
        }
    }

    /// Laplace mechanism on a count in {0, 1}, released into fixed bins.
    struct BinnedLaplace {
        eps: f64,
        edges: Vec<f64>,
    }
    impl FiniteMechanism<f64, f64> for BinnedLaplace {
        type Outcome = usize;
        fn outcome_space(&self, _: &f64) -> Vec<usize> {
            (0..=self.edges.len()).collect()
        }
        fn exact_distribution(&self, v: &f64) -> Option<Result<Vec<f64>>> {
            let lap = Laplace::new(1.0 / self.eps).unwrap();
            let mut cuts = vec![f64::NEG_INFINITY];
            cuts.extend(&self.edges);
            cuts.push(f64::INFINITY);
            Some(Ok(cuts.windows(2).map(|w| lap.interval_prob(w[0] - v, w[1] - v)).collect()))
        }
        fn sample<R: Rng + ?Sized>(&self, v: &f64, rng: &mut R) -> Result<usize> {
            let x = v + Laplace::new(1.0 / self.eps).unwrap().sample(rng);
            Ok(self.edges.iter().filter(|&&e| e < x).count())
        }
    }

    #[test]
    fn randomized_response_ratio_is_exactly_e_eps() {
        let eps: f64 = 0.7;
        let m = BitResponse { keep: eps.exp() / (1.0 + eps.exp()) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = empirical_privacy_ratio(&m, &false, &true, VerifyMode::Exact, &mut rng).unwrap();
        assert!((r.max_ratio - eps.exp()).abs() < 1e-12);
        assert!(r.within(eps));
        assert!(!r.within(eps - 1e-6));
    }

    #[test]
    fn warner_two_thirds_is_ln2() {
        let m = BitResponse { keep: 2.0 / 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = empirical_privacy_ratio(&m, &false, &true, VerifyMode::Exact, &mut rng).unwrap();
        assert!((r.max_ratio - 2.0).abs() < 1e-12);
        assert!((r.epsilon_hat() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_mechanism_ratio_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = empirical_privacy_ratio(&Constant, &false, &true, VerifyMode::Exact, &mut rng).unwrap();
        assert_eq!(r.max_ratio, 1.0);
        let mc = empirical_privacy_ratio(&Constant, &false, &true, VerifyMode::MonteCarlo { trials: 100 }, &mut rng)
            .unwrap();
        assert_eq!(mc.max_ratio, 1.0);
        assert!(!mc.inconclusive);
    }

    #[test]
    fn montecarlo_estimate_near_truth_and_flags_small_counts() {
        let m = BitResponse { keep: 2.0 / 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = empirical_privacy_ratio(&m, &false, &true, VerifyMode::MonteCarlo { trials: 200_000 }, &mut rng)
            .unwrap();
        assert!((r.max_ratio - 2.0).abs() < 0.05, "{}", r.max_ratio);
        assert!(!r.inconclusive);
        let skewed = BitResponse { keep: 0.999 };
        let r = empirical_privacy_ratio(&skewed, &false, &true, VerifyMode::MonteCarlo { trials: 1000 }, &mut rng)
            .unwrap();
        assert!(r.inconclusive);
        assert!(r.note().contains("inconclusive"));
    }

    #[test]
    fn binned_laplace_within_e_eps() {
        let eps = 0.5;
        let m = BinnedLaplace { eps, edges: (-10..=10).map(|k| k as f64 * 0.4).collect() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = empirical_privacy_ratio(&m, &0.0, &1.0, VerifyMode::Exact, &mut rng).unwrap();
        assert!(r.within(eps), "{}", r.max_ratio);
        // Tail bins attain the bound.
        assert!(r.max_ratio > eps.exp() * 0.999);
    }

    struct Mismatch;
    impl FiniteMechanism<bool, f64> for Mismatch {
        type Outcome = bool;
        fn outcome_space(&self, db: &bool) -> Vec<bool> {
            vec![*db]
        }
        fn sample<R: Rng + ?Sized>(&self, db: &bool, _: &mut R) -> Result<bool> {
            Ok(*db)
        }
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r: Result<PrivacyReport<f64>> = empirical_privacy_ratio(&Mismatch, &false, &true, VerifyMode::Exact, &mut rng);
        assert_eq!(r.unwrap_err(), Error::OutcomeSpaceMismatch);
    }
}
