//! Private PARITY learning.
//!
//! [`learn_once`] is the basic learner: it fails outright half of the time,
//! otherwise solves the linear system given by a random `ε/4` subsample and
//! returns a uniformly random solution. [`learn_amplified`] runs it on `k`
//! disjoint slices and picks the candidate with the smallest
//! Laplace-perturbed error on a held-out test slice.

use rand::Rng;
use serde::Serialize;

use crate::dp::{laplace_sample, FiniteMechanism};
use crate::error::{Error, Result};
use crate::gf2::{gaussian_eliminate, AffineSubspace, BitVector, LinearSystem};
use crate::learning::{mistakes, Concept, Database, Hypothesis, LabelConvention};
use crate::scalar::{unit, Real};

pub const PROVENANCE: &str = "parity-A";
pub const PROVENANCE_AMPLIFIED: &str = "parity-A*";

/// Default constant in `n′ = c·d/(ε·α′)`.
pub const DEFAULT_C: f64 = 20.0;
/// Default constant in `s = c′·k/(α′·ε)·ln(k/β′)`.
pub const DEFAULT_C_PRIME: f64 = 48.0;

/// Exact output distributions are refused above these sizes by default.
pub const EXACT_N_LIMIT: usize = 12;
pub const EXACT_D_LIMIT: usize = 10;

/// Privacy parameter of the basic learner; `0 < ε ≤ 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParityConfig<T = f64> {
    epsilon: T,
}

impl<T: Real> ParityConfig<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon <= T::lit(0.5)) {
            return Err(Error::param("epsilon", format!("parity learner needs 0 < epsilon <= 1/2, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Subsampling probability `p = ε/4`.
    pub fn inclusion_prob(&self) -> T {
        self.epsilon / T::lit(4.0)
    }
}

/// Output of a parity learner: a parity vector `r`, or failure.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    Bottom,
    Parity(BitVector),
}

impl Outcome {
    pub fn is_bottom(&self) -> bool {
        matches!(self, Outcome::Bottom)
    }

    pub fn hypothesis(&self, provenance: &str) -> Option<Hypothesis> {
        match self {
            Outcome::Bottom => None,
            Outcome::Parity(r) => Some(Hypothesis::new(Concept::parity(r.clone()), provenance)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnOutcome {
    pub result: Outcome,
    /// `|S|`; zero when the coin in the first step already forced ⊥.
    pub subsample_size: usize,
    /// `|V_S|`, or `None` when the system was never solved.
    pub subspace_size: Option<u128>,
    pub forced_bottom: bool,
}

fn require_zero_one(z: &Database) -> Result<()> {
    if z.convention() != LabelConvention::ZeroOne {
        return Err(Error::param("z", "parity learners expect {0,1} labels"));
    }
    Ok(())
}

fn system_for(z: &Database, subset: impl IntoIterator<Item = usize>) -> Result<LinearSystem> {
    let mut sys = LinearSystem::new(z.d())?;
    for i in subset {
        let e = z.get(i)?;
        sys.push(e.x.clone(), e.bit())?;
    }
    Ok(sys)
}

/// One run of the basic learner.
pub fn learn_once<T: Real, R: Rng + ?Sized>(z: &Database, cfg: &ParityConfig<T>, rng: &mut R) -> Result<LearnOutcome> {
    require_zero_one(z)?;
    if rng.gen::<bool>() {
        return Ok(LearnOutcome { result: Outcome::Bottom, subsample_size: 0, subspace_size: None, forced_bottom: true });
    }
    let p = cfg.inclusion_prob();
    let subset: Vec<usize> = (0..z.len()).filter(|_| unit::<T, R>(rng) < p).collect();
    let space = gaussian_eliminate(&system_for(z, subset.iter().copied())?);
    let result = if space.is_empty() { Outcome::Bottom } else { Outcome::Parity(space.sample_uniform(rng)?) };
    Ok(LearnOutcome { result, subsample_size: subset.len(), subspace_size: Some(space.size()), forced_bottom: false })
}

/// Exact output law of [`learn_once`]: mass of ⊥ and of every parity,
/// indexed by [`BitVector::to_index`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactDistribution<T = f64> {
    pub bottom: T,
    pub parities: Vec<T>,
}

impl<T: Real> ExactDistribution<T> {
    pub fn total(&self) -> T {
        self.bottom + self.parities.iter().copied().sum::<T>()
    }

    /// Masses in the order of [`ParityConfig`]'s outcome space.
    pub fn as_vec(&self) -> Vec<T> {
        std::iter::once(self.bottom).chain(self.parities.iter().copied()).collect()
    }
}

/// Sums over all `2^n` subsets `S`, weighting each by `p^|S|(1-p)^(n-|S|)`
/// and splitting its mass uniformly over `V_S`.
pub fn exact_output_distribution<T: Real>(z: &Database, cfg: &ParityConfig<T>, limit: usize) -> Result<ExactDistribution<T>> {
    require_zero_one(z)?;
    let (n, d) = (z.len(), z.d());
    if n > limit || d > EXACT_D_LIMIT {
        return Err(Error::InstanceTooLarge(format!("n = {n} (limit {limit}), d = {d} (limit {EXACT_D_LIMIT})")));
    }
    let half = T::lit(0.5);
    let p = cfg.inclusion_prob();
    let mut out = ExactDistribution { bottom: half, parities: vec![T::zero(); 1 << d] };
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as i32;
        let weight = half * p.powi(k) * (T::one() - p).powi(n as i32 - k);
        let space = gaussian_eliminate(&system_for(z, (0..n).filter(|i| mask >> i & 1 == 1))?);
        if space.is_empty() {
            out.bottom += weight;
            continue;
        }
        let share = weight / T::lit(space.size() as f64);
        for r in space.members() {
            out.parities[r.to_index() as usize] += share;
        }
    }
    Ok(out)
}

/// `Pr[r* = r | S = subset]` for every parity `r`: `1/|V_S|` on members.
pub fn conditional_mass<T: Real>(z: &Database, subset: &[usize]) -> Result<Vec<T>> {
    let d = z.d();
    if d > EXACT_D_LIMIT {
        return Err(Error::InstanceTooLarge(format!("d = {d} (limit {EXACT_D_LIMIT})")));
    }
    let space: AffineSubspace = gaussian_eliminate(&system_for(z, subset.iter().copied())?);
    let mut out = vec![T::zero(); 1 << d];
    if !space.is_empty() {
        let share = T::one() / T::lit(space.size() as f64);
        for r in space.members() {
            out[r.to_index() as usize] = share;
        }
    }
    Ok(out)
}

impl<T: Real> FiniteMechanism<Database, T> for ParityConfig<T> {
    type Outcome = Outcome;

    fn outcome_space(&self, db: &Database) -> Vec<Outcome> {
        let d = db.d().min(EXACT_D_LIMIT);
        std::iter::once(Outcome::Bottom)
            .chain((0..1u64 << d).map(|i| Outcome::Parity(BitVector::from_index(i, db.d()).expect("fits"))))
            .collect()
    }

    fn exact_distribution(&self, db: &Database) -> Option<Result<Vec<T>>> {
        Some(exact_output_distribution(db, self, EXACT_N_LIMIT).map(|e| e.as_vec()))
    }

    fn sample<R: Rng + ?Sized>(&self, db: &Database, rng: &mut R) -> Result<Outcome> {
        learn_once(db, self, rng).map(|o| o.result)
    }
}

/// `⌈(8/(εα))(d ln 2 + ln 4)⌉`, the size at which one run of the basic
/// learner succeeds with probability at least 1/4.
pub fn single_run_sample_size<T: Real>(d: usize, epsilon: T, alpha: T) -> Result<usize> {
    if !(epsilon > T::zero()) || !(alpha > T::zero()) {
        return Err(Error::param("epsilon/alpha", "must be positive"));
    }
    let v = (T::lit(8.0) / (epsilon * alpha)) * (T::from_usize_lossy(d) * T::lit(2.0).ln() + T::lit(4.0).ln());
    v.ceil().to_usize().ok_or_else(|| Error::param("n", "overflow"))
}

/// Parameters of the amplified learner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmplifiedConfig<T = f64> {
    pub alpha: T,
    pub beta: T,
    pub epsilon: T,
    pub c: T,
    pub c_prime: T,
}

impl<T: Real> AmplifiedConfig<T> {
    pub fn new(alpha: T, beta: T, epsilon: T) -> Result<Self> {
        Self::with_constants(alpha, beta, epsilon, T::lit(DEFAULT_C), T::lit(DEFAULT_C_PRIME))
    }

    pub fn with_constants(alpha: T, beta: T, epsilon: T, c: T, c_prime: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::param("alpha", "must lie in (0, 1)"));
        }
        if !(beta > T::zero() && beta < T::one()) {
            return Err(Error::param("beta", "must lie in (0, 1)"));
        }
        ParityConfig::new(epsilon)?;
        if !(c > T::zero()) || !(c_prime > T::zero()) {
            return Err(Error::param("c", "constants must be positive"));
        }
        Ok(Self { alpha, beta, epsilon, c, c_prime })
    }

    pub fn beta_prime(&self) -> T {
        self.beta / T::lit(2.0)
    }

    pub fn alpha_prime(&self) -> T {
        self.alpha / T::lit(5.0)
    }

    /// Smallest `k ≥ 1` with `(3/4)^k ≤ β′`.
    pub fn k(&self) -> usize {
        let k = (self.beta_prime().recip().ln() / T::lit(4.0 / 3.0).ln()).ceil();
        k.to_usize().unwrap_or(1).max(1)
    }

    /// Size of each training slice.
    pub fn n_prime(&self, d: usize) -> usize {
        (self.c * T::from_usize_lossy(d) / (self.epsilon * self.alpha_prime()))
            .ceil()
            .to_usize()
            .expect("finite")
    }

    /// Size of the test slice.
    pub fn s(&self) -> usize {
        let k = T::from_usize_lossy(self.k());
        (self.c_prime * k / (self.alpha_prime() * self.epsilon) * (k / self.beta_prime()).ln())
            .ceil()
            .to_usize()
            .expect("finite")
    }

    /// `k·n′ + s`; databases must be strictly larger.
    pub fn threshold(&self, d: usize) -> usize {
        self.k() * self.n_prime(d) + self.s()
    }

    pub fn required_sample_size(&self, d: usize) -> usize {
        self.threshold(d) + 1
    }

    /// Scale of the Laplace noise added to each test error: `k/(sε)`.
    pub fn noise_scale(&self) -> T {
        T::from_usize_lossy(self.k()) / (T::from_usize_lossy(self.s()) * self.epsilon)
    }
}

/// `k·n′ + s + 1` for the given constants.
pub fn required_sample_size_amplified<T: Real>(d: usize, epsilon: T, alpha: T, beta: T, c: T, c_prime: T) -> Result<usize> {
    if d == 0 {
        return Err(Error::EmptyVector);
    }
    Ok(AmplifiedConfig::with_constants(alpha, beta, epsilon, c, c_prime)?.required_sample_size(d))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmplifiedOutcome<T = f64> {
    pub result: Outcome,
    pub candidates: Vec<LearnOutcome>,
    /// Test error plus noise; `+∞` for ⊥ candidates.
    pub perturbed_errors: Vec<T>,
    pub selected: Option<usize>,
}

impl<T: Real> AmplifiedOutcome<T> {
    pub fn bottom_candidates(&self) -> usize {
        self.candidates.iter().filter(|c| c.result.is_bottom()).count()
    }
}

/// The amplified learner. Uses the first `k·n′` entries as `k` training
/// slices and the next `s` entries as the test slice.
pub fn learn_amplified<T: Real, R: Rng + ?Sized>(
    z: &Database,
    cfg: &AmplifiedConfig<T>,
    rng: &mut R,
) -> Result<AmplifiedOutcome<T>> {
    require_zero_one(z)?;
    let (k, n_prime, s) = (cfg.k(), cfg.n_prime(z.d()), cfg.s());
    if z.len() <= cfg.threshold(z.d()) {
        return Err(Error::InsufficientSamples { required: cfg.required_sample_size(z.d()), available: z.len() });
    }
    let base = ParityConfig::new(cfg.epsilon)?;
    let candidates = (0..k)
        .map(|j| learn_once(&z.slice(j * n_prime, (j + 1) * n_prime)?, &base, rng))
        .collect::<Result<Vec<_>>>()?;
    let test = z.slice(k * n_prime, k * n_prime + s)?;
    let scale = cfg.noise_scale();
    let perturbed_errors = candidates
        .iter()
        .map(|cand| match &cand.result {
            Outcome::Bottom => Ok(T::infinity()),
            Outcome::Parity(r) => {
                let err = T::from_usize_lossy(mistakes(&Concept::parity(r.clone()), &test)?) / T::from_usize_lossy(s);
                Ok(err + laplace_sample(scale, rng)?)
            }
        })
        .collect::<Result<Vec<T>>>()?;
    let mut selected: Option<usize> = None;
    for (j, e) in perturbed_errors.iter().enumerate() {
        if e.is_finite() && selected.map_or(true, |b| *e < perturbed_errors[b]) {
            selected = Some(j);
        }
    }
    let result = selected.map_or(Outcome::Bottom, |j| candidates[j].result.clone());
    Ok(AmplifiedOutcome { result, candidates, perturbed_errors, selected })
}
