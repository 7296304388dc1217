//! Private agnostic learning by the exponential mechanism over a finite class.
//!
//! The score of a hypothesis is minus its number of mistakes on the database,
//! so changing one entry moves every score by at most one. Output
//! probabilities are proportional to `exp(ε·q(z,h)/2)`.

use rand::Rng;

use crate::dp::FiniteMechanism;
use crate::error::{Error, Result};
use crate::gf2::BitVector;
use crate::learning::{distinct_labelings, mistakes, Concept, Database, Hypothesis};
use crate::scalar::{sample_index, Real};

pub const PROVENANCE: &str = "exp-mech";
pub const PROVENANCE_VC: &str = "exp-mech-vc";

/// `q(z, h)`: minus the number of entries of `z` that `h` misclassifies.
pub fn score(z: &Database, h: &Concept) -> Result<i64> {
    Ok(-(mistakes(h, z)? as i64))
}

/// Normalized `exp(ε·s/2)` weights, computed after subtracting the maximum.
pub fn exp_weights<T: Real>(scores: &[i64], epsilon: T) -> Vec<T> {
    let half = epsilon / T::lit(2.0);
    let top = scores.iter().copied().max().unwrap_or(0);
    let w: Vec<T> = scores
        .iter()
        .map(|&s| (half * T::lit((s - top) as f64)).exp())
        .collect();
    let total: T = w.iter().copied().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// The mechanism `A^ε_q` over a fixed hypothesis list.
#[derive(Clone, Debug)]
pub struct ExpMech<T = f64> {
    hypotheses: Vec<Hypothesis>,
    epsilon: T,
}

impl<T: Real> ExpMech<T> {
    /// `ε = 0` is allowed and yields the uniform distribution.
    pub fn new(hypotheses: Vec<Hypothesis>, epsilon: T) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::EmptyClass);
        }
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::param("epsilon", format!("must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { hypotheses, epsilon })
    }

    pub fn from_concepts(class: &[Concept], epsilon: T) -> Result<Self> {
        Self::new(class.iter().map(|c| Hypothesis::new(c.clone(), PROVENANCE)).collect(), epsilon)
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn scores(&self, z: &Database) -> Result<Vec<i64>> {
        self.hypotheses.iter().map(|h| score(z, &h.concept)).collect()
    }

    pub fn exact_output_distribution(&self, z: &Database) -> Result<Vec<T>> {
        Ok(exp_weights(&self.scores(z)?, self.epsilon))
    }

    /// Index of the drawn hypothesis.
    pub fn sample_index<R: Rng + ?Sized>(&self, z: &Database, rng: &mut R) -> Result<usize> {
        Ok(sample_index(&self.exact_output_distribution(z)?, rng))
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &Database, rng: &mut R) -> Result<&Hypothesis> {
        Ok(&self.hypotheses[self.sample_index(z, rng)?])
    }
}

impl<T: Real> FiniteMechanism<Database, T> for ExpMech<T> {
    type Outcome = usize;

    fn outcome_space(&self, _db: &Database) -> Vec<usize> {
        (0..self.hypotheses.len()).collect()
    }

    fn exact_distribution(&self, db: &Database) -> Option<Result<Vec<T>>> {
        Some(self.exact_output_distribution(db))
    }

    fn sample<R: Rng + ?Sized>(&self, db: &Database, rng: &mut R) -> Result<usize> {
        self.sample_index(db, rng)
    }
}

/// `⌈6 (ln|H| + ln(1/β)) · max{1/(εα), 1/α²}⌉`.
pub fn required_sample_size<T: Real>(h_size: usize, epsilon: T, alpha: T, beta: T) -> Result<usize> {
    let half = T::lit(0.5);
    if h_size == 0 {
        return Err(Error::EmptyClass);
    }
    if !(epsilon > T::zero()) {
        return Err(Error::param("epsilon", "must be positive"));
    }
    if !(alpha > T::zero() && alpha < half) {
        return Err(Error::param("alpha", "must lie in (0, 1/2)"));
    }
    if !(beta > T::zero() && beta < half) {
        return Err(Error::param("beta", "must lie in (0, 1/2)"));
    }
    let logs = T::lit((h_size as f64).ln()) + beta.recip().ln();
    let rate = (epsilon * alpha).recip().max((alpha * alpha).recip());
    let n = (T::lit(6.0) * logs * rate).ceil();
    n.to_usize().ok_or_else(|| Error::param("n", "sample size overflows usize"))
}

/// Draws one hypothesis from `A^ε_q` with `H` as the class.
pub fn agnostic_learn<T: Real, R: Rng + ?Sized>(
    z: &Database,
    hypotheses: &[Hypothesis],
    epsilon: T,
    rng: &mut R,
) -> Result<Hypothesis> {
    let mech = ExpMech::new(hypotheses.to_vec(), epsilon)?;
    Ok(mech.sample(z, rng)?.clone())
}

/// Learner for a class of bounded VC dimension on a finite domain: one
/// representative per distinct labeling of `domain`, fed to the mechanism.
pub fn vc_learn<T: Real, R: Rng + ?Sized>(
    z: &Database,
    class: &[Concept],
    domain: &[BitVector],
    epsilon: T,
    rng: &mut R,
) -> Result<Hypothesis> {
    let reps: Vec<Hypothesis> = distinct_labelings(class, domain)?
        .into_iter()
        .map(|(_, c)| Hypothesis::new(c, PROVENANCE_VC))
        .collect();
    agnostic_learn(z, &reps, epsilon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{empirical_privacy_ratio, VerifyMode};
    use crate::learning::{generate_database, parity_class, Distribution, Example, LabelConvention};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn db(rows: &[(&str, i8)]) -> Database {
        let ex = rows
            .iter()
            .map(|(x, y)| Example::new(x.parse().unwrap(), *y, LabelConvention::ZeroOne).unwrap())
            .collect();
        Database::from_examples(2, LabelConvention::ZeroOne, ex).unwrap()
    }

    #[test]
    fn score_examples() {
        let c = Concept::parity("11".parse().unwrap());
        let z = db(&[("10", 1), ("01", 1), ("11", 0)]);
        assert_eq!(score(&z, &c).unwrap(), 0);
        let z7 = Database::from_examples(
            2,
            LabelConvention::ZeroOne,
            (0..7).map(|_| Example::new("10".parse().unwrap(), 0, LabelConvention::ZeroOne).unwrap()).collect(),
        )
        .unwrap();
        assert_eq!(score(&z7, &c).unwrap(), -7);
        let z5 = db(&[("10", 0), ("01", 0), ("11", 0), ("00", 0), ("00", 0)]);
        assert_eq!(score(&z5, &c).unwrap(), -2);
    }

    #[test]
    fn weights_examples() {
        let u = exp_weights::<f64>(&[-3, -3, -3], 1.0);
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = exp_weights::<f64>(&[0, -2], 1.0);
        assert!((p[0] / p[1] - 1f64.exp()).abs() < 1e-12);
        let z = exp_weights::<f64>(&[0, -5, -100], 0.0);
        assert!(z.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let tiny = exp_weights::<f64>(&[-100_000, -100_001], 1.0);
        assert!((tiny.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(tiny.iter().all(|p| p.is_finite() && *p > 0.0));
    }

    #[test]
    fn shift_invariance() {
        let a = exp_weights::<f64>(&[0, -1, -4, -2], 0.7);
        let b = exp_weights::<f64>(&[-10, -11, -14, -12], 0.7);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_frequencies_match_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let class: Vec<Concept> = (0..10).map(|_| Concept::random_table(3, &mut rng).unwrap()).collect();
        let c = Concept::random_table(3, &mut rng).unwrap();
        let z = generate_database(&Distribution::<f64>::uniform(3).unwrap(), &c, 6, LabelConvention::ZeroOne, &mut rng)
            .unwrap();
        let mech = ExpMech::from_concepts(&class, 1.0).unwrap();
        let exact = mech.exact_output_distribution(&z).unwrap();
        assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let draws = 100_000;
        let mut counts = vec![0usize; 10];
        for _ in 0..draws {
            counts[mech.sample_index(&z, &mut rng).unwrap()] += 1;
        }
        let tv: f64 = counts.iter().zip(&exact).map(|(&k, p)| (k as f64 / draws as f64 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn reproducible_and_singleton() {
        let class = parity_class(2).unwrap();
        let z = db(&[("10", 1), ("01", 0)]);
        let mech = ExpMech::from_concepts(&class, 0.5).unwrap();
        let a: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(8);
            (0..50).map(|_| mech.sample_index(&z, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(8);
            (0..50).map(|_| mech.sample_index(&z, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        let single = ExpMech::from_concepts(&class[..1], 5.0).unwrap();
        assert_eq!(single.sample_index(&z, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), 0);
        assert!(matches!(agnostic_learn::<f64, _>(&z, &[], 1.0, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::EmptyClass)));
    }

    #[test]
    fn empty_database_gives_uniform() {
        let class = parity_class(2).unwrap();
        let mech = ExpMech::from_concepts(&class, 3.0f64).unwrap();
        let z = Database::new(2, LabelConvention::ZeroOne).unwrap();
        assert!(mech.exact_output_distribution(&z).unwrap().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(required_sample_size(1 << 10, 0.5, 0.1, 0.05).unwrap(), 5957);
        let a = required_sample_size(16, 2.0, 0.3, 0.1).unwrap();
        let expect = (6.0 * ((16f64).ln() + 10f64.ln()) / 0.09).ceil() as usize;
        assert_eq!(a, expect);
        assert!(required_sample_size(16, 0.5, 0.1, 0.01).unwrap() > required_sample_size(16, 0.5, 0.1, 0.1).unwrap());
        assert!(required_sample_size(16, 0.5, 0.6, 0.1).is_err());
        assert!(required_sample_size(16, 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn privacy_on_neighbors_of_small_database() {
        let class = parity_class(2).unwrap();
        let eps = 0.8;
        let mech = ExpMech::from_concepts(&class, eps).unwrap();
        let z = db(&[("10", 1), ("11", 0), ("01", 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..3 {
            for x in 0..4u64 {
                for y in [0, 1] {
                    let e = Example::new(BitVector::from_index(x, 2).unwrap(), y, LabelConvention::ZeroOne).unwrap();
                    let z2 = z.with_replaced(i, e).unwrap();
                    let r = empirical_privacy_ratio(&mech, &z, &z2, VerifyMode::Exact, &mut rng).unwrap();
                    assert!(r.within(eps), "{}", r.max_ratio);
                }
            }
        }
    }

    #[test]
    fn vc_learner_dedups() {
        let dom: Vec<BitVector> = (0..2).map(|i| BitVector::from_index(i, 2).unwrap()).collect();
        let class = parity_class(2).unwrap();
        let z = db(&[("10", 1), ("10", 1), ("10", 1), ("10", 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = vc_learn(&z, &class, &dom, 50.0, &mut rng).unwrap();
        assert_eq!(h.provenance, PROVENANCE_VC);
        assert!(h.eval(&"10".parse().unwrap()).unwrap());
    }
}
