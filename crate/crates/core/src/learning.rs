//! Examples, databases, distributions, concepts and error measurement.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::BitVector;
use crate::scalar::{sample_index, Real};

/// Largest domain for which errors are computed by exact enumeration.
pub const EXACT_DOMAIN_LIMIT: u128 = 1 << 20;
/// Largest explicit point list accepted by [`distinct_labelings`].
pub const LABELING_DOMAIN_LIMIT: usize = 1 << 16;

/// How labels are written down.
///
/// A label bit `β` is stored as `β` under `ZeroOne` and as `(-1)^β` under
/// `PlusMinus`, so `+1` corresponds to bit 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelConvention {
    ZeroOne,
    PlusMinus,
}

impl LabelConvention {
    pub fn name(self) -> &'static str {
        match self {
            LabelConvention::ZeroOne => "{0,1}",
            LabelConvention::PlusMinus => "{+1,-1}",
        }
    }

    pub fn encode(self, bit: bool) -> i8 {
        match self {
            LabelConvention::ZeroOne => bit as i8,
            LabelConvention::PlusMinus => {
                if bit {
                    -1
                } else {
                    1
                }
            }
        }
    }

    pub fn decode(self, label: i8) -> Result<bool> {
        match (self, label) {
            (LabelConvention::ZeroOne, 0) | (LabelConvention::PlusMinus, 1) => Ok(false),
            (LabelConvention::ZeroOne, 1) | (LabelConvention::PlusMinus, -1) => Ok(true),
            _ => Err(Error::BadLabel { label, convention: self.name() }),
        }
    }

    /// Re-expresses a label written in `self` under `other`.
    pub fn convert(self, label: i8, other: LabelConvention) -> Result<i8> {
        Ok(other.encode(self.decode(label)?))
    }
}

/// A labeled example `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub x: BitVector,
    y: i8,
    convention: LabelConvention,
}

impl Example {
    pub fn new(x: BitVector, y: i8, convention: LabelConvention) -> Result<Self> {
        convention.decode(y)?;
        Ok(Self { x, y, convention })
    }

    pub fn from_bit(x: BitVector, bit: bool, convention: LabelConvention) -> Self {
        Self { x, y: convention.encode(bit), convention }
    }

    pub fn y(&self) -> i8 {
        self.y
    }

    pub fn convention(&self) -> LabelConvention {
        self.convention
    }

    /// Label as a bit, independent of convention.
    pub fn bit(&self) -> bool {
        self.convention.decode(self.y).expect("label validated at construction")
    }
}

/// An ordered database `z = (z_1, ..., z_n)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    d: usize,
    convention: LabelConvention,
    entries: Vec<Example>,
}

impl Database {
    pub fn new(d: usize, convention: LabelConvention) -> Result<Self> {
        if d == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Self { d, convention, entries: Vec::new() })
    }

    pub fn from_examples(d: usize, convention: LabelConvention, examples: Vec<Example>) -> Result<Self> {
        let mut db = Self::new(d, convention)?;
        for e in examples {
            db.push(e)?;
        }
        Ok(db)
    }

    pub fn push(&mut self, e: Example) -> Result<()> {
        if e.x.len() != self.d {
            return Err(Error::LengthMismatch { expected: self.d, got: e.x.len() });
        }
        if e.convention != self.convention {
            return Err(Error::BadLabel { label: e.y, convention: self.convention.name() });
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn convention(&self) -> LabelConvention {
        self.convention
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Example] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Result<&Example> {
        self.entries.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.len() })
    }

    /// The neighbor obtained by replacing entry `i` with `e`.
    pub fn with_replaced(&self, i: usize, e: Example) -> Result<Self> {
        self.get(i)?;
        if e.x.len() != self.d {
            return Err(Error::LengthMismatch { expected: self.d, got: e.x.len() });
        }
        if e.convention != self.convention {
            return Err(Error::BadLabel { label: e.y, convention: self.convention.name() });
        }
        let mut out = self.clone();
        out.entries[i] = e;
        Ok(out)
    }

    /// Number of indices at which the two databases differ.
    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: other.len() });
        }
        Ok(self.entries.iter().zip(&other.entries).filter(|(a, b)| a != b).count())
    }

    /// Contiguous sub-database `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::IndexOutOfRange { index: end, len: self.len() });
        }
        Ok(Self { d: self.d, convention: self.convention, entries: self.entries[start..end].to_vec() })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y"])?;
        for e in &self.entries {
            wr.write_record([e.x.to_string(), e.y.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a database with header `x,y`. The dimension is taken from the
    /// first row; an empty file needs `d` from the caller.
    pub fn read_csv<R: Read>(r: R, d: Option<usize>, convention: LabelConvention) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
            return Err(Error::Parse(format!("expected header x,y, got {headers:?}")));
        }
        let mut examples = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let x: BitVector = rec[0].trim().parse()?;
            let y: i8 = rec[1].trim().parse().map_err(|_| Error::Parse(format!("bad label {:?}", &rec[1])))?;
            examples.push(Example::new(x, y, convention)?);
        }
        let d = match (d, examples.first()) {
            (Some(d), _) => d,
            (None, Some(e)) => e.x.len(),
            (None, None) => return Err(Error::EmptyDatabase),
        };
        Self::from_examples(d, convention, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path, convention: LabelConvention) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, None, convention)
    }
}

/// A distribution over unlabeled points of `{0,1}^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Distribution<T = f64> {
    UniformCube { d: usize },
    Weighted { d: usize, points: Vec<BitVector>, weights: Vec<T> },
}

fn check_weights<T: Real>(weights: &[T]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= T::zero())) {
        return Err(Error::param("weights", "must be nonnegative"));
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::check_eps() * T::lit(16.0) {
        return Err(Error::param("weights", format!("sum to {total}, not 1")));
    }
    Ok(())
}

impl<T: Real> Distribution<T> {
    pub fn uniform(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Distribution::UniformCube { d })
    }

    pub fn weighted(points: Vec<BitVector>, weights: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("points", "support must be nonempty"));
        }
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: points.len(), got: weights.len() });
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::LengthMismatch { expected: d, got: p.len() });
        }
        check_weights(&weights)?;
        Ok(Distribution::Weighted { d, points, weights })
    }

    pub fn d(&self) -> usize {
        match self {
            Distribution::UniformCube { d } | Distribution::Weighted { d, .. } => *d,
        }
    }

    pub fn support_size(&self) -> u128 {
        match self {
            Distribution::UniformCube { d } => {
                if *d >= 128 {
                    u128::MAX
                } else {
                    1u128 << d
                }
            }
            Distribution::Weighted { points, .. } => points.len() as u128,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector {
        match self {
            Distribution::UniformCube { d } => BitVector::random(*d, rng).expect("d > 0"),
            Distribution::Weighted { points, weights, .. } => points[sample_index(weights, rng)].clone(),
        }
    }

    /// All support points with their probabilities, if at most `limit`.
    pub fn enumerate(&self, limit: u128) -> Result<Vec<(BitVector, T)>> {
        let size = self.support_size();
        if size > limit {
            return Err(Error::DomainTooLarge { size, limit });
        }
        Ok(match self {
            Distribution::UniformCube { d } => {
                let w = T::one() / T::lit(size as f64);
                (0..size as u64).map(|i| (BitVector::from_index(i, *d).expect("fits"), w)).collect()
            }
            Distribution::Weighted { points, weights, .. } => {
                points.iter().cloned().zip(weights.iter().copied()).collect()
            }
        })
    }
}

/// An explicit finite distribution over labeled examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDistribution<T = f64> {
    d: usize,
    convention: LabelConvention,
    support: Vec<Example>,
    weights: Vec<T>,
}

impl<T: Real> LabeledDistribution<T> {
    pub fn new(support: Vec<Example>, weights: Vec<T>) -> Result<Self> {
        let first = support.first().ok_or_else(|| Error::param("support", "must be nonempty"))?;
        let (d, convention) = (first.x.len(), first.convention);
        if support.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: support.len(), got: weights.len() });
        }
        for e in &support {
            if e.x.len() != d {
                return Err(Error::LengthMismatch { expected: d, got: e.x.len() });
            }
            if e.convention != convention {
                return Err(Error::BadLabel { label: e.y, convention: convention.name() });
            }
        }
        check_weights(&weights)?;
        Ok(Self { d, convention, support, weights })
    }

    /// The realizable distribution: `x ~ dist`, labeled by `c`.
    pub fn realizable(dist: &Distribution<T>, c: &Concept, convention: LabelConvention) -> Result<Self> {
        let pts = dist.enumerate(EXACT_DOMAIN_LIMIT)?;
        let mut support = Vec::with_capacity(pts.len());
        let mut weights = Vec::with_capacity(pts.len());
        for (x, w) in pts {
            let bit = c.eval(&x)?;
            support.push(Example::from_bit(x, bit, convention));
            weights.push(w);
        }
        Self::new(support, weights)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn convention(&self) -> LabelConvention {
        self.convention
    }

    pub fn support(&self) -> &[Example] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Example {
        self.support[sample_index(&self.weights, rng)].clone()
    }

    pub fn sample_database<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Database {
        let entries = (0..n).map(|_| self.sample(rng)).collect();
        Database { d: self.d, convention: self.convention, entries }
    }
}

/// A boolean concept, returning a label bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Concept {
    /// `x ↦ r ⊙ x`.
    Parity { r: BitVector },
    /// Truth table indexed by [`BitVector::to_index`].
    Table { d: usize, truth: Vec<bool> },
    Constant { d: usize, bit: bool },
    Complement(Box<Concept>),
    /// Masked parity on points encoded as `x | i | b` (d, log d and 1 bits).
    MaskedParity { r: BitVector, a: bool },
}

impl Concept {
    pub fn parity(r: BitVector) -> Self {
        Concept::Parity { r }
    }

    pub fn table(d: usize, truth: Vec<bool>) -> Result<Self> {
        if d == 0 || d > 20 {
            return Err(Error::param("d", "truth tables need 1 <= d <= 20"));
        }
        if truth.len() != 1 << d {
            return Err(Error::LengthMismatch { expected: 1 << d, got: truth.len() });
        }
        Ok(Concept::Table { d, truth })
    }

    pub fn random_table<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || d > 20 {
            return Err(Error::param("d", "truth tables need 1 <= d <= 20"));
        }
        Self::table(d, (0..1usize << d).map(|_| rng.gen()).collect())
    }

    pub fn complement(self) -> Self {
        match self {
            Concept::Complement(inner) => *inner,
            c => Concept::Complement(Box::new(c)),
        }
    }

    /// Length of the points this concept is defined on.
    pub fn dim(&self) -> usize {
        match self {
            Concept::Parity { r } => r.len(),
            Concept::Table { d, .. } | Concept::Constant { d, .. } => *d,
            Concept::Complement(c) => c.dim(),
            Concept::MaskedParity { r, .. } => {
                let d = r.len();
                d + d.trailing_zeros() as usize + 1
            }
        }
    }

    pub fn eval(&self, x: &BitVector) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &BitVector) -> bool {
        match self {
            Concept::Parity { r } => r.dot_unchecked(x),
            Concept::Table { truth, .. } => truth[x.to_index() as usize],
            Concept::Constant { bit, .. } => *bit,
            Concept::Complement(c) => !c.eval_unchecked(x),
            Concept::MaskedParity { r, a } => {
                let d = r.len();
                let log_d = d.trailing_zeros() as usize;
                if x.get(d + log_d) {
                    let i = (0..log_d).fold(0usize, |acc, k| acc | (x.get(d + k) as usize) << k);
                    r.get(i)
                } else {
                    ((0..d).filter(|&k| r.get(k) && x.get(k)).count() % 2 == 1) ^ *a
                }
            }
        }
    }

    pub fn label(&self, x: &BitVector, convention: LabelConvention) -> Result<i8> {
        Ok(convention.encode(self.eval(x)?))
    }
}

/// A concept emitted by a learner, tagged with the learner's name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub concept: Concept,
    pub provenance: String,
}

impl Hypothesis {
    pub fn new(concept: Concept, provenance: impl Into<String>) -> Self {
        Self { concept, provenance: provenance.into() }
    }

    pub fn eval(&self, x: &BitVector) -> Result<bool> {
        self.concept.eval(x)
    }
}

/// `n` i.i.d. points from `dist`, labeled by `c`.
pub fn generate_database<T: Real, R: Rng + ?Sized>(
    dist: &Distribution<T>,
    c: &Concept,
    n: usize,
    convention: LabelConvention,
    rng: &mut R,
) -> Result<Database> {
    if c.dim() != dist.d() {
        return Err(Error::LengthMismatch { expected: dist.d(), got: c.dim() });
    }
    let entries = (0..n)
        .map(|_| {
            let x = dist.sample(rng);
            let bit = c.eval_unchecked(&x);
            Example::from_bit(x, bit, convention)
        })
        .collect();
    Ok(Database { d: dist.d(), convention, entries })
}

/// How [`true_error`] evaluates the probability of disagreement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorOracle {
    /// Exact enumeration; refuses domains above [`EXACT_DOMAIN_LIMIT`].
    Exact,
    /// Exact when possible, otherwise `samples` draws from a seeded stream.
    MonteCarlo { samples: usize, seed: u64 },
}

/// `Pr_{x ~ dist}[h(x) != c(x)]`.
pub fn true_error<T: Real>(h: &Concept, dist: &Distribution<T>, c: &Concept, oracle: ErrorOracle) -> Result<T> {
    if h.dim() != dist.d() || c.dim() != dist.d() {
        return Err(Error::LengthMismatch { expected: dist.d(), got: h.dim().max(c.dim()) });
    }
    match dist.enumerate(EXACT_DOMAIN_LIMIT) {
        Ok(pts) => Ok(pts
            .iter()
            .filter(|(x, _)| h.eval_unchecked(x) != c.eval_unchecked(x))
            .map(|(_, w)| *w)
            .sum()),
        Err(e) => match oracle {
            ErrorOracle::Exact => Err(e),
            ErrorOracle::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::param("samples", "must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let wrong = (0..samples)
                    .filter(|_| {
                        let x = dist.sample(&mut rng);
                        h.eval_unchecked(&x) != c.eval_unchecked(&x)
                    })
                    .count();
                Ok(T::from_usize_lossy(wrong) / T::from_usize_lossy(samples))
            }
        },
    }
}

/// `Pr_{(x,y) ~ dist}[h(x) != y]`, exactly.
pub fn true_error_labeled<T: Real>(h: &Concept, dist: &LabeledDistribution<T>) -> Result<T> {
    if h.dim() != dist.d {
        return Err(Error::LengthMismatch { expected: dist.d, got: h.dim() });
    }
    Ok(dist
        .support
        .iter()
        .zip(&dist.weights)
        .filter(|(e, _)| h.eval_unchecked(&e.x) != e.bit())
        .map(|(_, w)| *w)
        .sum())
}

/// Number of entries of `z` misclassified by `h`.
pub fn mistakes(h: &Concept, z: &Database) -> Result<usize> {
    if h.dim() != z.d {
        return Err(Error::LengthMismatch { expected: z.d, got: h.dim() });
    }
    Ok(z.entries.iter().filter(|e| h.eval_unchecked(&e.x) != e.bit()).count())
}

/// Fraction of `z` misclassified by `h`.
pub fn training_error<T: Real>(h: &Concept, z: &Database) -> Result<T> {
    if z.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    Ok(T::from_usize_lossy(mistakes(h, z)?) / T::from_usize_lossy(z.len()))
}

/// `min_{c in class} err(c)`.
pub fn opt_error<T: Real>(class: &[Concept], dist: &LabeledDistribution<T>) -> Result<T> {
    if class.is_empty() {
        return Err(Error::EmptyClass);
    }
    class
        .iter()
        .map(|c| true_error_labeled(c, dist))
        .try_fold(T::infinity(), |m, e| e.map(|e| m.min(e)))
}

/// Deduplicated labelings of `domain` by members of `class`, each with the
/// first concept that produces it.
pub fn distinct_labelings(class: &[Concept], domain: &[BitVector]) -> Result<Vec<(Vec<bool>, Concept)>> {
    if domain.len() > LABELING_DOMAIN_LIMIT {
        return Err(Error::DomainTooLarge { size: domain.len() as u128, limit: LABELING_DOMAIN_LIMIT as u128 });
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for c in class {
        let labels = domain.iter().map(|x| c.eval(x)).collect::<Result<Vec<_>>>()?;
        if seen.insert(labels.clone()) {
            out.push((labels, c.clone()));
        }
    }
    Ok(out)
}

/// All `2^d` parities on `{0,1}^d`.
pub fn parity_class(d: usize) -> Result<Vec<Concept>> {
    if d == 0 || d > 20 {
        return Err(Error::param("d", "parity class enumeration needs 1 <= d <= 20"));
    }
    (0..1u64 << d).map(|i| Ok(Concept::parity(BitVector::from_index(i, d)?))).collect()
}
