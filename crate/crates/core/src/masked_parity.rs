//! MASKED-PARITY: a class that is learnable by a two-round adaptive SQ
//! learner but not by nonadaptive ones, together with the Fourier tools and
//! the adversarial oracle used to exhibit the separation.
//!
//! A point is `(x, i, b)` with `x ∈ {0,1}^d`, `i ∈ [0, d)` and `b ∈ {0,1}`,
//! stored as a bit vector `x | i | b` (least significant bits first), so its
//! index is `x + 2^d·(i + d·b)`. Labels are `±1` with `+1` for bit 0.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gf2::BitVector;
use crate::learning::{Concept, Example, LabelConvention, EXACT_DOMAIN_LIMIT};
use crate::scalar::Real;
use crate::sq::{FiniteDistribution, QueryFn, SqAccess, SqLearner, SqQuery};

pub const PROVENANCE: &str = "A_MP";

/// A decoded domain point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskedPoint {
    pub x: BitVector,
    pub i: usize,
    pub b: bool,
}

/// The domain `{0,1}^d × [d] × {0,1}` for a power-of-two `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedDomain {
    d: usize,
    log_d: usize,
}

impl MaskedDomain {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::param("d", format!("must be a power of two, got {d}")));
        }
        let log_d = d.trailing_zeros() as usize;
        let size = (1u128 << d) * d as u128 * 2;
        if size > EXACT_DOMAIN_LIMIT as u128 {
            return Err(Error::DomainTooLarge { size, limit: EXACT_DOMAIN_LIMIT as u128 });
        }
        Ok(Self { d, log_d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Length of an encoded point, `d + log d + 1`.
    pub fn dim(&self) -> usize {
        self.d + self.log_d + 1
    }

    pub fn size(&self) -> usize {
        (1usize << self.d) * self.d * 2
    }

    /// Size of each `b`-half.
    pub fn half(&self) -> usize {
        self.size() / 2
    }

    pub fn index_of(&self, x: usize, i: usize, b: bool) -> usize {
        x + (1 << self.d) * (i + self.d * b as usize)
    }

    /// `(x, i, b)` for a domain index.
    pub fn split(&self, idx: usize) -> (usize, usize, bool) {
        let x = idx & ((1 << self.d) - 1);
        let rest = idx >> self.d;
        (x, rest % self.d, rest >= self.d)
    }

    pub fn point(&self, idx: usize) -> MaskedPoint {
        let (x, i, b) = self.split(idx);
        MaskedPoint { x: BitVector::from_index(x as u64, self.d).expect("d < 64"), i, b }
    }

    pub fn encode(&self, p: &MaskedPoint) -> Result<BitVector> {
        if p.x.len() != self.d {
            return Err(Error::LengthMismatch { expected: self.d, got: p.x.len() });
        }
        if p.i >= self.d {
            return Err(Error::IndexOutOfRange { index: p.i, len: self.d });
        }
        BitVector::from_index(self.index_of(p.x.to_index() as usize, p.i, p.b) as u64, self.dim())
    }

    pub fn decode(&self, v: &BitVector) -> Result<MaskedPoint> {
        Ok(self.point(self.index_of_bits(v)?))
    }

    /// Domain index of an encoded point.
    pub fn index_of_bits(&self, v: &BitVector) -> Result<usize> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: v.len() });
        }
        let idx = v.to_index() as usize;
        Ok(idx)
    }

    pub fn points(&self) -> Vec<BitVector> {
        (0..self.size()).map(|k| BitVector::from_index(k as u64, self.dim()).expect("fits")).collect()
    }

    /// All `2^{d+1}` concepts, ordered by `(a, r)` index `r + 2^d·a`.
    pub fn concepts(&self) -> Vec<MaskedParity> {
        (0..2usize << self.d).map(|k| self.concept(k)).collect()
    }

    pub fn concept(&self, k: usize) -> MaskedParity {
        MaskedParity {
            r: BitVector::from_index((k & ((1 << self.d) - 1)) as u64, self.d).expect("d < 64"),
            a: k >> self.d & 1 == 1,
        }
    }

    pub fn random_concept<R: Rng + ?Sized>(&self, rng: &mut R) -> MaskedParity {
        self.concept(rng.gen_range(0..2usize << self.d))
    }

    /// The uniform distribution over the domain labeled by `c`.
    pub fn labeled_uniform<T: Real>(&self, c: &MaskedParity) -> Result<FiniteDistribution<Example, T>> {
        let support = (0..self.size())
            .map(|k| {
                let x = BitVector::from_index(k as u64, self.dim())?;
                Ok(Example::from_bit(x, c.eval_index(self, k), LabelConvention::PlusMinus))
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteDistribution::uniform(support)
    }

    /// `c` as a `±1` table over domain indices.
    pub fn table<T: Real>(&self, c: &MaskedParity) -> Vec<T> {
        (0..self.size()).map(|k| if c.eval_index(self, k) { -T::one() } else { T::one() }).collect()
    }

    /// `c` restricted to the half `b = s` (zero elsewhere).
    pub fn restricted_table<T: Real>(&self, c: &MaskedParity, s: bool) -> Vec<T> {
        let mut t = self.table(c);
        let h = self.half();
        let range = if s { 0..h } else { h..2 * h };
        t[range].iter_mut().for_each(|v| *v = T::zero());
        t
    }
}

/// The concept `c_{r,a}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MaskedParity {
    pub r: BitVector,
    pub a: bool,
}

impl fmt::Display for MaskedParity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r={} a={}", self.r, self.a as u8)
    }
}

impl MaskedParity {
    /// Label bit at `p`: `r·x ⊕ a` when `b = 0`, `r_i` when `b = 1`.
    pub fn eval_bit(&self, p: &MaskedPoint) -> Result<bool> {
        if p.x.len() != self.r.len() {
            return Err(Error::LengthMismatch { expected: self.r.len(), got: p.x.len() });
        }
        if p.i >= self.r.len() {
            return Err(Error::IndexOutOfRange { index: p.i, len: self.r.len() });
        }
        Ok(if p.b { self.r.get(p.i) } else { self.r.dot_unchecked(&p.x) ^ self.a })
    }

    /// `±1` label at `p`.
    pub fn evaluate(&self, p: &MaskedPoint) -> Result<i8> {
        Ok(LabelConvention::PlusMinus.encode(self.eval_bit(p)?))
    }

    fn eval_index(&self, dom: &MaskedDomain, k: usize) -> bool {
        let (x, i, b) = dom.split(k);
        if b {
            self.r.get(i)
        } else {
            ((x as u64 & self.r.to_index()).count_ones() % 2 == 1) ^ self.a
        }
    }

    pub fn index(&self) -> usize {
        self.r.to_index() as usize + ((self.a as usize) << self.r.len())
    }

    pub fn to_concept(&self) -> Concept {
        Concept::MaskedParity { r: self.r.clone(), a: self.a }
    }
}

/// Exact error of `h` against `c` under the uniform distribution.
pub fn masked_error<T: Real>(c: &MaskedParity, h: &MaskedParity) -> Result<T> {
    if c.r.len() != h.r.len() {
        return Err(Error::LengthMismatch { expected: c.r.len(), got: h.r.len() });
    }
    let d = T::from_usize_lossy(c.r.len());
    let lower = if c.r != h.r {
        T::lit(0.5)
    } else if c.a != h.a {
        T::one()
    } else {
        T::zero()
    };
    let mut diff = c.r.clone();
    diff.xor_assign(&h.r);
    let upper = T::from_usize_lossy(diff.count_ones() as usize) / d;
    Ok((lower + upper) / T::lit(2.0))
}

fn label_sign(e: &Example) -> i8 {
    if e.bit() {
        -1
    } else {
        1
    }
}

/// Builds a query from a function of `(x, i, b, y)` with `y ∈ {+1, -1}`.
pub fn point_query<T: Real>(
    dom: &MaskedDomain,
    f: impl Fn(usize, usize, bool, i8) -> T + Send + Sync + 'static,
) -> QueryFn<Example, T> {
    let dom = dom.clone();
    Arc::new(move |e: &Example| match dom.index_of_bits(&e.x) {
        Ok(k) => {
            let (x, i, b) = dom.split(k);
            f(x, i, b, label_sign(e))
        }
        Err(_) => T::nan(),
    })
}

/// The two-round learner: `d` queries reveal `r` from the `b = 1` half,
/// then one query against `c_{r,0}` on the `b = 0` half reveals `a`.
#[derive(Clone, Debug)]
pub struct AdaptiveMaskedLearner {
    dom: MaskedDomain,
}

impl AdaptiveMaskedLearner {
    pub fn new(dom: MaskedDomain) -> Self {
        Self { dom }
    }

    pub fn round_one_tau<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(4 * self.dom.d + 1)
    }

    pub fn round_two_tau<T: Real>(&self) -> T {
        T::lit(0.2)
    }

    /// `g_j(x,i,b,y) = [i = j ∧ b = 1 ∧ y = -1]`.
    pub fn round_one_queries<T: Real>(&self, tau: T) -> Result<Vec<SqQuery<Example, T>>> {
        (0..self.dom.d)
            .map(|j| {
                let g = point_query(&self.dom, move |_, i, b, y| if i == j && b && y < 0 { T::one() } else { T::zero() });
                Ok(SqQuery::new(g, T::one(), tau)?.tagged(format!("amp:r{j}")))
            })
            .collect()
    }

    /// `g_{d+1}(x,i,b,y) = [b = 0 ∧ y = -(-1)^{r·x}]`.
    pub fn round_two_query<T: Real>(&self, r: &BitVector, tau: T) -> Result<SqQuery<Example, T>> {
        let rm = r.to_index() as usize;
        let g = point_query(&self.dom, move |x, _, b, y| {
            let parity = if (x & rm).count_ones() % 2 == 1 { -1 } else { 1 };
            if !b && y == -parity {
                T::one()
            } else {
                T::zero()
            }
        });
        Ok(SqQuery::new(g, T::one(), tau)?.tagged(format!("amp:a:{r}")))
    }

    pub fn decode_r<T: Real>(&self, answers: &[T]) -> Result<BitVector> {
        let cut = T::one() / T::from_usize_lossy(4 * self.dom.d);
        BitVector::from_bits(&answers.iter().map(|&v| v > cut).collect::<Vec<_>>())
    }
}

impl<T: Real> SqLearner<Example, T> for AdaptiveMaskedLearner {
    type Output = MaskedParity;

    fn learn<A: SqAccess<Example, T>>(&mut self, sq: &mut A) -> Result<MaskedParity> {
        let answers = sq.round(&self.round_one_queries(self.round_one_tau())?)?;
        let r = self.decode_r(&answers)?;
        let v = sq.ask(&self.round_two_query(&r, self.round_two_tau())?)?;
        Ok(MaskedParity { r, a: v > T::lit(0.25) })
    }
}

/// Uniform inner product `(1/|D|) Σ f·h`.
pub fn inner_product_uniform<T: Real>(f: &[T], h: &[T]) -> Result<T> {
    if f.len() != h.len() {
        return Err(Error::LengthMismatch { expected: f.len(), got: h.len() });
    }
    if f.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(f.iter().zip(h).map(|(a, b)| *a * *b).sum::<T>() / T::from_usize_lossy(f.len()))
}

/// Walsh–Hadamard transform in place: `out[r] = Σ_x v[x]·(-1)^{r·x}`.
fn walsh_hadamard<T: Real>(v: &mut [T]) {
    let mut h = 1;
    while h < v.len() {
        for start in (0..v.len()).step_by(2 * h) {
            for k in start..start + h {
                let (a, b) = (v[k], v[k + h]);
                v[k] = a + b;
                v[k + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// A query split into a label-independent constant and a label-linear part:
/// `E[g(p, c(p))] = C_g + ⟨f_g, c⟩`.
#[derive(Clone, Debug)]
pub struct FourierPieces<T = f64> {
    dom: MaskedDomain,
    c_g: T,
    f: Vec<T>,
    spectrum0: Vec<T>,
    level1: Vec<T>,
}

impl<T: Real> FourierPieces<T> {
    pub fn c_g(&self) -> T {
        self.c_g
    }

    pub fn f(&self) -> &[T] {
        &self.f
    }

    /// `f_g` restricted to the half `b = s`.
    pub fn f_half(&self, s: bool) -> Vec<T> {
        let h = self.dom.half();
        self.f.iter().enumerate().map(|(k, &v)| if (k >= h) == s { v } else { T::zero() }).collect()
    }

    /// `⟨f_g^0, c^0_{r,0}⟩` for every `r`.
    pub fn spectrum0(&self) -> &[T] {
        &self.spectrum0
    }

    /// `⟨f_g^0, c^0_{r,a}⟩`.
    pub fn corr0(&self, c: &MaskedParity) -> T {
        let v = self.spectrum0[c.r.to_index() as usize];
        if c.a {
            -v
        } else {
            v
        }
    }

    /// `⟨f_g^1, c^1_{r,a}⟩`, which does not depend on `a`.
    pub fn corr1(&self, c: &MaskedParity) -> T {
        self.level1.iter().enumerate().map(|(i, &v)| if c.r.get(i) { -v } else { v }).sum()
    }

    /// `C_g + ⟨f_g, c⟩`.
    pub fn expectation(&self, c: &MaskedParity) -> T {
        self.c_g + self.corr0(c) + self.corr1(c)
    }

    /// `Σ_{(r,a)} 2·⟨f_g^0, c^0_{r,a}⟩²`.
    pub fn parseval_sum(&self) -> T {
        T::lit(4.0) * self.spectrum0.iter().map(|v| *v * *v).sum::<T>()
    }
}

/// Tabulates `g` at both labels on every point.
pub fn tabulate<T: Real>(dom: &MaskedDomain, g: &QueryFn<Example, T>) -> Result<(Vec<T>, Vec<T>)> {
    let mut plus = Vec::with_capacity(dom.size());
    let mut minus = Vec::with_capacity(dom.size());
    for k in 0..dom.size() {
        let x = BitVector::from_index(k as u64, dom.dim())?;
        plus.push(g(&Example::from_bit(x.clone(), false, LabelConvention::PlusMinus)));
        minus.push(g(&Example::from_bit(x, true, LabelConvention::PlusMinus)));
    }
    Ok((plus, minus))
}

/// Decomposes a tabulated query and verifies the identity against direct
/// evaluation for every concept.
pub fn fourier_decompose_tables<T: Real>(dom: &MaskedDomain, plus: &[T], minus: &[T]) -> Result<FourierPieces<T>> {
    if plus.len() != dom.size() || minus.len() != dom.size() {
        return Err(Error::LengthMismatch { expected: dom.size(), got: plus.len().min(minus.len()) });
    }
    let n = T::from_usize_lossy(dom.size());
    let two = T::lit(2.0);
    let c_g = plus.iter().zip(minus).map(|(a, b)| *a + *b).sum::<T>() / (two * n);
    let f: Vec<T> = plus.iter().zip(minus).map(|(a, b)| (*a - *b) / two).collect();
    let width = 1usize << dom.d;
    let mut folded = vec![T::zero(); width];
    let mut level1 = vec![T::zero(); dom.d];
    for (k, &v) in f.iter().enumerate() {
        let (x, i, b) = dom.split(k);
        if b {
            level1[i] += v / n;
        } else {
            folded[x] += v / n;
        }
    }
    walsh_hadamard(&mut folded);
    let pieces = FourierPieces { dom: dom.clone(), c_g, f, spectrum0: folded, level1 };
    let tol = T::lit(1e-9).max(T::check_eps() * T::lit(1e3));
    for c in dom.concepts() {
        let direct = (0..dom.size())
            .map(|k| if c.eval_index(dom, k) { minus[k] } else { plus[k] })
            .sum::<T>()
            / n;
        if (direct - pieces.expectation(&c)).abs() > tol {
            return Err(Error::param("g", format!("decomposition identity failed for {c}")));
        }
    }
    Ok(pieces)
}

pub fn fourier_decompose<T: Real>(dom: &MaskedDomain, g: &QueryFn<Example, T>) -> Result<FourierPieces<T>> {
    let (plus, minus) = tabulate(dom, g)?;
    fourier_decompose_tables(dom, &plus, &minus)
}

/// Parseval sum for `g` and its slack `1 - sum`.
pub fn parseval_check<T: Real>(dom: &MaskedDomain, g: &QueryFn<Example, T>) -> Result<(T, T)> {
    let s = fourier_decompose(dom, g)?.parseval_sum();
    Ok((s, T::one() - s))
}

/// Fraction of concepts with `|⟨f_g^0, c^0⟩| ≥ threshold`.
pub fn heavy_fraction<T: Real>(pieces: &FourierPieces<T>, threshold: T) -> T {
    let heavy = pieces.spectrum0.iter().filter(|v| v.abs() >= threshold).count();
    T::from_usize_lossy(heavy) / T::from_usize_lossy(pieces.spectrum0.len())
}

/// Which branch the adversarial oracle took for one query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRecord {
    pub query_id: usize,
    pub tag: Option<String>,
    pub masked: bool,
    pub correlation: f64,
    pub round: usize,
}

/// The oracle that hides `a`: when the query's correlation with the `b = 0`
/// half of the hidden concept is below `τ`, it answers as if that half were
/// absent, which does not depend on `a`.
pub struct AdversarialMaskedOracle<T = f64> {
    dom: MaskedDomain,
    hidden: MaskedParity,
    cache: HashMap<String, Arc<FourierPieces<T>>>,
    records: Vec<BranchRecord>,
    rounds: usize,
}

impl<T: Real> AdversarialMaskedOracle<T> {
    pub fn new(dom: MaskedDomain, hidden: MaskedParity) -> Result<Self> {
        if hidden.r.len() != dom.d {
            return Err(Error::LengthMismatch { expected: dom.d, got: hidden.r.len() });
        }
        Ok(Self { dom, hidden, cache: HashMap::new(), records: Vec::new(), rounds: 0 })
    }

    /// Replaces the hidden concept, keeping decompositions of tagged queries.
    pub fn reset(&mut self, hidden: MaskedParity) {
        self.hidden = hidden;
        self.records.clear();
        self.rounds = 0;
    }

    pub fn hidden(&self) -> &MaskedParity {
        &self.hidden
    }

    pub fn records(&self) -> &[BranchRecord] {
        &self.records
    }

    /// True when every query so far was answered by the masked branch.
    pub fn good(&self) -> bool {
        self.records.iter().all(|r| r.masked)
    }

    fn pieces(&mut self, q: &SqQuery<Example, T>) -> Result<Arc<FourierPieces<T>>> {
        if let Some(p) = q.tag().and_then(|t| self.cache.get(t)) {
            return Ok(p.clone());
        }
        let (plus, minus) = tabulate(&self.dom, q.g())?;
        if plus.iter().chain(&minus).any(|v| !(v.abs() <= q.b() * (T::one() + T::check_eps()))) {
            let bad = plus.iter().chain(&minus).find(|v| !(v.abs() <= q.b())).copied().unwrap_or(T::nan());
            return Err(Error::QueryOutOfRange { value: bad.as_f64(), bound: q.b().as_f64() });
        }
        let p = Arc::new(fourier_decompose_tables(&self.dom, &plus, &minus)?);
        if let Some(t) = q.tag() {
            self.cache.insert(t.to_string(), p.clone());
        }
        Ok(p)
    }

    /// Answers one query, recording the branch.
    pub fn answer(&mut self, q: &SqQuery<Example, T>, round: usize) -> Result<T> {
        let p = self.pieces(q)?;
        let corr0 = p.corr0(&self.hidden);
        let truth = p.expectation(&self.hidden);
        let masked = corr0.abs() < q.tau();
        let v = if masked { p.c_g() + p.corr1(&self.hidden) } else { truth };
        assert!((v - truth).abs() <= q.tau(), "adversarial oracle left its tolerance");
        self.records.push(BranchRecord {
            query_id: self.records.len(),
            tag: q.tag().map(str::to_string),
            masked,
            correlation: corr0.as_f64(),
            round,
        });
        Ok(v)
    }
}

impl<T: Real> SqAccess<Example, T> for AdversarialMaskedOracle<T> {
    fn round(&mut self, queries: &[SqQuery<Example, T>]) -> Result<Vec<T>> {
        let round = self.rounds;
        self.rounds += 1;
        queries.iter().map(|q| self.answer(q, round)).collect()
    }
}

/// An [`SqAccess`] that permits exactly one round; a second round means
/// the strategy looked at answers before fixing all its queries.
pub struct NonadaptiveSession<'a, A> {
    inner: &'a mut A,
    used: bool,
}

impl<'a, A> NonadaptiveSession<'a, A> {
    pub fn new(inner: &'a mut A) -> Self {
        Self { inner, used: false }
    }
}

impl<U, T, A: SqAccess<U, T>> SqAccess<U, T> for NonadaptiveSession<'_, A> {
    fn round(&mut self, queries: &[SqQuery<U, T>]) -> Result<Vec<T>> {
        if self.used {
            return Err(Error::AdaptiveStrategy);
        }
        self.used = true;
        self.inner.round(queries)
    }
}

/// Nonadaptive strategies used in the separation experiment.
#[derive(Clone, Debug)]
pub enum Strategy<T = f64> {
    /// `t` random `±1`-valued queries; the hypothesis is the concept whose
    /// exact answers are closest (max deviation) to the observed ones.
    RandomBattery { tables: Arc<Vec<(Vec<T>, Vec<T>)>>, tau: T },
    /// The first round of the adaptive learner, then a fixed guess of `a`.
    RoundOneGuess { guess: bool, tau: T },
    /// The first round of the adaptive learner plus `t - d` parity probes on
    /// the `b = 0` half; `a` is a majority vote over the probes' signs.
    MajorityVote { probes: Vec<BitVector>, tau: T },
}

impl<T: Real> Strategy<T> {
    pub fn random_battery<R: Rng + ?Sized>(dom: &MaskedDomain, t: usize, tau: T, rng: &mut R) -> Self {
        let mut draw = || (0..dom.size()).map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() }).collect::<Vec<_>>();
        let tables = (0..t).map(|_| (draw(), draw())).collect();
        Strategy::RandomBattery { tables: Arc::new(tables), tau }
    }

    pub fn majority_vote<R: Rng + ?Sized>(dom: &MaskedDomain, t: usize, tau: T, rng: &mut R) -> Result<Self> {
        let probes = (0..t.saturating_sub(dom.d)).map(|_| BitVector::random(dom.d, rng)).collect::<Result<_>>()?;
        Ok(Strategy::MajorityVote { probes, tau })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::RandomBattery { .. } => "random-battery",
            Strategy::RoundOneGuess { .. } => "round-one-guess",
            Strategy::MajorityVote { .. } => "majority-vote",
        }
    }

    pub fn num_queries(&self, dom: &MaskedDomain) -> usize {
        match self {
            Strategy::RandomBattery { tables, .. } => tables.len(),
            Strategy::RoundOneGuess { .. } => dom.d,
            Strategy::MajorityVote { probes, .. } => dom.d + probes.len(),
        }
    }

    /// The fixed query list.
    pub fn queries(&self, dom: &MaskedDomain) -> Result<Vec<SqQuery<Example, T>>> {
        let amp = AdaptiveMaskedLearner::new(dom.clone());
        match self {
            Strategy::RandomBattery { tables, tau } => (0..tables.len())
                .map(|j| {
                    let tabs = tables.clone();
                    let d2 = dom.clone();
                    let g: QueryFn<Example, T> = Arc::new(move |e: &Example| match d2.index_of_bits(&e.x) {
                        Ok(k) if e.bit() => tabs[j].1[k],
                        Ok(k) => tabs[j].0[k],
                        Err(_) => T::nan(),
                    });
                    Ok(SqQuery::new(g, T::one(), *tau)?.tagged(format!("battery:{j}")))
                })
                .collect(),
            Strategy::RoundOneGuess { tau, .. } => amp.round_one_queries(*tau),
            Strategy::MajorityVote { probes, tau } => {
                let mut qs = amp.round_one_queries(*tau)?;
                for (j, s) in probes.iter().enumerate() {
                    let sm = s.to_index() as usize;
                    let g = point_query(dom, move |x, _, b, y| {
                        if b {
                            T::zero()
                        } else if (x & sm).count_ones() % 2 == 1 {
                            -T::from(y).unwrap()
                        } else {
                            T::from(y).unwrap()
                        }
                    });
                    qs.push(SqQuery::new(g, T::one(), *tau)?.tagged(format!("probe:{j}:{s}")));
                }
                Ok(qs)
            }
        }
    }

    /// The hypothesis rule applied to the answers.
    pub fn hypothesis(&self, dom: &MaskedDomain, answers: &[T], pieces: &[Arc<FourierPieces<T>>]) -> Result<MaskedParity> {
        let amp = AdaptiveMaskedLearner::new(dom.clone());
        match self {
            Strategy::RandomBattery { .. } => {
                let mut best = (T::infinity(), 0);
                for (k, c) in dom.concepts().iter().enumerate() {
                    let dev = pieces
                        .iter()
                        .zip(answers)
                        .map(|(p, &v)| (p.expectation(c) - v).abs())
                        .fold(T::zero(), |m, x| m.max(x));
                    if dev < best.0 {
                        best = (dev, k);
                    }
                }
                Ok(dom.concept(best.1))
            }
            Strategy::RoundOneGuess { guess, .. } => Ok(MaskedParity { r: amp.decode_r(&answers[..dom.d])?, a: *guess }),
            Strategy::MajorityVote { .. } => {
                let r = amp.decode_r(&answers[..dom.d])?;
                let neg = answers[dom.d..].iter().filter(|&&v| v < T::zero()).count();
                let pos = answers[dom.d..].iter().filter(|&&v| v > T::zero()).count();
                Ok(MaskedParity { r, a: neg > pos })
            }
        }
    }
}

/// A strategy bound to a domain, runnable as an SQ learner.
pub struct StrategyLearner<'s, T = f64> {
    pub strategy: &'s Strategy<T>,
    pub dom: MaskedDomain,
    pieces: Vec<Arc<FourierPieces<T>>>,
}

impl<'s, T: Real> StrategyLearner<'s, T> {
    pub fn new(strategy: &'s Strategy<T>, dom: MaskedDomain) -> Result<Self> {
        let pieces = if let Strategy::RandomBattery { tables, .. } = strategy {
            tables
                .iter()
                .map(|(p, m)| fourier_decompose_tables(&dom, p, m).map(Arc::new))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { strategy, dom, pieces })
    }
}

impl<T: Real> SqLearner<Example, T> for StrategyLearner<'_, T> {
    type Output = MaskedParity;

    fn learn<A: SqAccess<Example, T>>(&mut self, sq: &mut A) -> Result<MaskedParity> {
        let answers = sq.round(&self.strategy.queries(&self.dom)?)?;
        self.strategy.hypothesis(&self.dom, &answers, &self.pieces)
    }
}

/// One trial of the separation experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationTrial {
    pub trial: usize,
    pub r: String,
    pub a: u8,
    pub err: f64,
    pub good_event: bool,
}

/// Aggregate statistics of the separation experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub strategy: String,
    pub d: usize,
    pub t: usize,
    pub trials: usize,
    /// Empirical `Pr[err ≥ 1/4]`.
    pub failure_rate: f64,
    /// Empirical `Pr[Good]`.
    pub good_rate: f64,
    /// Empirical `Pr[err ≥ 1/4 | Good]`, if Good occurred.
    pub failure_given_good: Option<f64>,
    /// `1 - t/2^{d/3+2}`.
    pub good_bound: f64,
    /// `(1/2)(1 - t/2^{d/3+2})`.
    pub failure_bound: f64,
    /// Empirical `Pr[err ≥ 1/4]` of the adaptive learner on the same concepts.
    pub adaptive_failure_rate: f64,
    #[serde(skip)]
    pub records: Vec<SeparationTrial>,
}

impl SeparationReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for rec in &self.records {
            wr.serialize(rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `2^{-d/3}`, the tolerance used by the nonadaptive strategies.
pub fn separation_tau(d: usize) -> f64 {
    2f64.powf(-(d as f64) / 3.0)
}

/// Draws `trials` uniform concepts, runs `strategy` against the adversarial
/// oracle through a one-round session, and also runs the adaptive learner on
/// each concept. Trials use independent streams of `seed`.
pub fn separation_experiment<T: Real>(
    strategy: &Strategy<T>,
    dom: &MaskedDomain,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be positive"));
    }
    let t = strategy.num_queries(dom);
    let quarter = 0.25 - 1e-12;
    let out = (0..trials)
        .into_par_iter()
        .map_init(
            || StrategyLearner::new(strategy, dom.clone()).map(|l| (l, None::<AdversarialMaskedOracle<T>>)),
            |state, trial| -> Result<(SeparationTrial, bool)> {
                let (learner, oracle_slot) = state.as_mut().map_err(|e| e.clone())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let c = dom.random_concept(&mut rng);
                let oracle = match oracle_slot {
                    Some(o) => {
                        o.reset(c.clone());
                        o
                    }
                    None => oracle_slot.insert(AdversarialMaskedOracle::new(dom.clone(), c.clone())?),
                };
                let h = learner.learn(&mut NonadaptiveSession::new(oracle))?;
                let good = oracle.good();
                let err: f64 = masked_error(&c, &h)?;
                oracle.reset(c.clone());
                let h_amp = SqLearner::<Example, T>::learn(&mut AdaptiveMaskedLearner::new(dom.clone()), oracle)?;
                let adaptive_failed = masked_error::<f64>(&c, &h_amp)? >= quarter;
                Ok((
                    SeparationTrial { trial, r: c.r.to_string(), a: c.a as u8, err, good_event: good },
                    adaptive_failed,
                ))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let n = trials as f64;
    let failures = out.iter().filter(|(r, _)| r.err >= quarter).count();
    let goods = out.iter().filter(|(r, _)| r.good_event).count();
    let good_failures = out.iter().filter(|(r, _)| r.good_event && r.err >= quarter).count();
    let bound = 1.0 - t as f64 / 2f64.powf(dom.d as f64 / 3.0 + 2.0);
    Ok(SeparationReport {
        strategy: strategy.name().to_string(),
        d: dom.d,
        t,
        trials,
        failure_rate: failures as f64 / n,
        good_rate: goods as f64 / n,
        failure_given_good: (goods > 0).then(|| good_failures as f64 / goods as f64),
        good_bound: bound,
        failure_bound: bound / 2.0,
        adaptive_failure_rate: out.iter().filter(|(_, f)| *f).count() as f64 / n,
        records: out.into_iter().map(|(r, _)| r).collect(),
    })
}
