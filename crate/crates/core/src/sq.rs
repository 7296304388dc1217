//! Statistical queries: oracles over finite distributions, the learner
//! interface, and the simulation of transparent local randomizers by
//! rejection sampling with SQ-estimated acceptance probabilities.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::learning::{Example, LabeledDistribution};
use crate::local::{FiniteRandomizer, LrAccess, RandOutput, Randomizer};
use crate::scalar::{sample_index, unit, Real};

/// A query function on the example domain.
pub type QueryFn<U, T = f64> = Arc<dyn Fn(&U) -> T + Send + Sync>;

/// A statistical query `g` with range `[-b, b]` and tolerance `τ`.
#[derive(Clone)]
pub struct SqQuery<U, T = f64> {
    g: QueryFn<U, T>,
    b: T,
    tau: T,
    tag: Option<String>,
}

impl<U, T: Real> fmt::Debug for SqQuery<U, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SqQuery").field("b", &self.b).field("tau", &self.tau).field("tag", &self.tag).finish()
    }
}

impl<U, T: Real> SqQuery<U, T> {
    pub fn new(g: QueryFn<U, T>, b: T, tau: T) -> Result<Self> {
        if !(b > T::zero()) || !b.is_finite() {
            return Err(Error::param("b", format!("must be positive, got {b}")));
        }
        if !(tau > T::zero() && tau < T::one()) {
            return Err(Error::param("tau", format!("must lie in (0, 1), got {tau}")));
        }
        Ok(Self { g, b, tau, tag: None })
    }

    /// Names the query; adversarial oracles can key perturbations on it.
    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn g(&self) -> &QueryFn<U, T> {
        &self.g
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    /// `g(u)`, checked against the range bound.
    pub fn eval(&self, u: &U) -> Result<T> {
        let v = (self.g)(u);
        if !(v.abs() <= self.b * (T::one() + T::check_eps())) {
            return Err(Error::QueryOutOfRange { value: v.as_f64(), bound: self.b.as_f64() });
        }
        Ok(v)
    }
}

/// A distribution with finite explicit support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteDistribution<U, T = f64> {
    support: Vec<U>,
    weights: Vec<T>,
}

impl<U: Clone, T: Real> FiniteDistribution<U, T> {
    pub fn new(support: Vec<U>, weights: Vec<T>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::param("support", "must be nonempty"));
        }
        if support.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: support.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::param("weights", "must be nonnegative"));
        }
        let s: T = weights.iter().copied().sum();
        if (s - T::one()).abs() > T::check_eps() * T::lit(16.0) {
            return Err(Error::param("weights", format!("sum to {s}, not 1")));
        }
        Ok(Self { support, weights })
    }

    pub fn uniform(support: Vec<U>) -> Result<Self> {
        let w = T::one() / T::from_usize_lossy(support.len().max(1));
        let n = support.len();
        Self::new(support, vec![w; n])
    }

    pub fn support(&self) -> &[U] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> U {
        self.support[sample_index(&self.weights, rng)].clone()
    }

    /// `E[f]` by enumeration.
    pub fn expect(&self, f: impl Fn(&U) -> T) -> T {
        self.support.iter().zip(&self.weights).map(|(u, &w)| w * f(u)).sum()
    }

    /// Exact `E[g]`, with every support point checked against `[-b, b]`.
    pub fn expectation(&self, q: &SqQuery<U, T>) -> Result<T> {
        let mut total = T::zero();
        for (u, &w) in self.support.iter().zip(&self.weights) {
            total += w * q.eval(u)?;
        }
        Ok(total)
    }
}

impl<T: Real> From<&LabeledDistribution<T>> for FiniteDistribution<Example, T> {
    fn from(d: &LabeledDistribution<T>) -> Self {
        Self { support: d.support().to_vec(), weights: d.weights().to_vec() }
    }
}

/// How an adversarial oracle moves its answers inside `[E[g]-τ, E[g]+τ]`.
/// Values are multiples of `τ` and are clamped to `[-1, 1]`.
#[derive(Clone)]
pub enum Perturbation {
    /// Multiplier for the `j`-th query (cycled).
    ByIndex(Vec<i8>),
    /// Multiplier by query tag; untagged or unlisted queries get 0.
    ByTag(HashMap<String, i8>),
    Custom(Arc<dyn Fn(usize, Option<&str>) -> f64 + Send + Sync>),
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::ByIndex(s) => f.debug_tuple("ByIndex").field(s).finish(),
            Perturbation::ByTag(s) => f.debug_tuple("ByTag").field(s).finish(),
            Perturbation::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Perturbation {
    fn multiplier(&self, index: usize, tag: Option<&str>) -> f64 {
        let m = match self {
            Perturbation::ByIndex(s) if s.is_empty() => 0.0,
            Perturbation::ByIndex(s) => s[index % s.len()] as f64,
            Perturbation::ByTag(m) => tag.and_then(|t| m.get(t)).copied().unwrap_or(0) as f64,
            Perturbation::Custom(f) => f(index, tag),
        };
        m.clamp(-1.0, 1.0)
    }
}

/// The three SQ oracle variants.
#[derive(Clone, Debug)]
pub enum SqOracle {
    /// Returns `E[g]` exactly.
    Exact,
    /// Returns `E[g] + m·τ` for a chosen multiplier `m ∈ [-1, 1]`.
    Adversarial(Perturbation),
    /// Empirical mean over `samples` fresh draws; `τ`-accurate only with
    /// high probability.
    Sampled { samples: usize },
}

impl SqOracle {
    pub fn is_guaranteed(&self) -> bool {
        !matches!(self, SqOracle::Sampled { .. })
    }
}

/// Answers `q` about `dist`. `index` is the position of the query in the
/// session, used by index-keyed perturbations.
pub fn sq_answer<U: Clone, T: Real, R: Rng + ?Sized>(
    oracle: &SqOracle,
    dist: &FiniteDistribution<U, T>,
    q: &SqQuery<U, T>,
    index: usize,
    rng: &mut R,
) -> Result<T> {
    match oracle {
        SqOracle::Exact => dist.expectation(q),
        SqOracle::Adversarial(p) => Ok(dist.expectation(q)? + T::lit(p.multiplier(index, q.tag())) * q.tau()),
        SqOracle::Sampled { samples } => {
            if *samples == 0 {
                return Err(Error::param("samples", "must be positive"));
            }
            let mut total = T::zero();
            for _ in 0..*samples {
                total += q.eval(&dist.sample(rng))?;
            }
            Ok(total / T::from_usize_lossy(*samples))
        }
    }
}

/// Access to a distribution through statistical queries. Queries passed in
/// one call form one round: they are fixed before any of them is answered.
pub trait SqAccess<U, T> {
    fn round(&mut self, queries: &[SqQuery<U, T>]) -> Result<Vec<T>>;

    /// A round with a single query.
    fn ask(&mut self, q: &SqQuery<U, T>) -> Result<T> {
        Ok(self.round(std::slice::from_ref(q))?.swap_remove(0))
    }
}

/// An algorithm that learns through an [`SqAccess`].
pub trait SqLearner<U, T> {
    type Output;

    fn learn<A: SqAccess<U, T>>(&mut self, sq: &mut A) -> Result<Self::Output>;
}

/// One line of an SQ trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqTraceRecord<T = f64> {
    pub query_id: usize,
    pub tag: Option<String>,
    pub tau: T,
    pub answer: T,
    pub round: usize,
}

/// An [`SqAccess`] backed by an [`SqOracle`] over a finite distribution.
pub struct SqSession<'a, U, T = f64> {
    oracle: &'a SqOracle,
    dist: &'a FiniteDistribution<U, T>,
    rng: ChaCha8Rng,
    queries: usize,
    rounds: usize,
    trace: Option<Vec<SqTraceRecord<T>>>,
}

impl<'a, U: Clone, T: Real> SqSession<'a, U, T> {
    pub fn new(oracle: &'a SqOracle, dist: &'a FiniteDistribution<U, T>, seed: u64) -> Self {
        Self { oracle, dist, rng: ChaCha8Rng::seed_from_u64(seed), queries: 0, rounds: 0, trace: None }
    }

    /// Keeps a record of every answered query.
    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn trace(&self) -> &[SqTraceRecord<T>] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in self.trace() {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<U: Clone, T: Real> SqAccess<U, T> for SqSession<'_, U, T> {
    fn round(&mut self, queries: &[SqQuery<U, T>]) -> Result<Vec<T>> {
        let round = self.rounds;
        self.rounds += 1;
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            let id = self.queries;
            let v = sq_answer(self.oracle, self.dist, q, id, &mut self.rng)?;
            self.queries += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(SqTraceRecord { query_id: id, tag: q.tag.clone(), tau: q.tau, answer: v, round });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Result of one simulated randomizer invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RejectionRun {
    pub output: usize,
    pub iterations: usize,
    pub sq_queries: usize,
}

const MAX_ITERATIONS: usize = 10_000_000;

/// `φ = β/(3t)` and `τ = β/(3e^{2ε}t)` for a single randomizer.
pub fn rejection_parameters<T: Real>(epsilon: T, t: usize, beta: T) -> Result<(T, T)> {
    if t == 0 {
        return Err(Error::param("t", "must be at least 1"));
    }
    if !(beta > T::zero()) {
        return Err(Error::param("beta", "must be positive"));
    }
    let phi = beta / (T::lit(3.0) * T::from_usize_lossy(t));
    if phi > T::lit(1.0 / 3.0) {
        return Err(Error::param("beta", format!("phi = beta/(3t) = {phi} exceeds 1/3")));
    }
    let tau = phi / (T::lit(2.0) * epsilon).exp();
    Ok((phi, tau))
}

fn sinh2<T: Real>(eps: T) -> T {
    eps.exp() - (-eps).exp()
}

/// The query whose expectation determines `p(w)/q(w)` for one randomizer.
fn ratio_query<U, T: Real>(r: &FiniteRandomizer<U, T>, w: usize, q_w: T, tau: T) -> Result<SqQuery<U, T>>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    let r2 = r.clone();
    let scale = q_w * sinh2(r.epsilon());
    let g: QueryFn<U, T> = Arc::new(move |z: &U| (r2.prob(z, w).unwrap_or(T::nan()) - q_w) / scale);
    Ok(SqQuery::new(g, T::one(), tau)?.tagged(format!("{}:w={w}", r.id())))
}

fn accept_probability<T: Real>(p_tilde: T, q_w: T, phi: T, eps: T) -> Result<T> {
    let a = p_tilde / (q_w * (T::one() + phi) * eps.exp());
    if !(a >= -T::check_eps() && a <= T::one() + T::lit(1e-9)) {
        return Err(Error::param(
            "sq answer",
            format!("acceptance probability {a} outside [0, 1]; the oracle broke its tolerance"),
        ));
    }
    Ok(a.max(T::zero()).min(T::one()))
}

fn rejection_loop<T: Real, R: Rng + ?Sized>(
    q_row: &[T],
    eps: T,
    phi: T,
    mut p_tilde: impl FnMut(usize) -> Result<(T, usize)>,
    rng: &mut R,
) -> Result<RejectionRun> {
    let mut sq_queries = 0;
    for iterations in 1..=MAX_ITERATIONS {
        let w = sample_index(q_row, rng);
        let (pt, used) = p_tilde(w)?;
        sq_queries += used;
        let a = accept_probability(pt, q_row[w], phi, eps)?;
        if unit::<T, R>(rng) < a {
            return Ok(RejectionRun { output: w, iterations, sq_queries });
        }
    }
    Err(Error::param("iterations", "rejection sampler did not accept"))
}

/// Simulates one application of `r` to a fresh draw from the distribution
/// behind `sq`: propose `w ~ R(reference)`, estimate `p(w)` with one query,
/// accept with probability `p̃(w)/(q(w)(1+φ)e^ε)`.
pub fn rejection_simulate<U, T: Real, A, R>(
    r: &FiniteRandomizer<U, T>,
    t: usize,
    beta: T,
    sq: &mut A,
    rng: &mut R,
) -> Result<RejectionRun>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    A: SqAccess<U, T>,
    R: Rng + ?Sized,
{
    let eps = r.epsilon();
    let (phi, tau) = rejection_parameters(eps, t, beta)?;
    let q_row = r.row(r.reference())?.to_vec();
    rejection_loop(
        &q_row,
        eps,
        phi,
        |w| {
            let q_w = q_row[w];
            if eps == T::zero() {
                return Ok((q_w, 0));
            }
            let v = sq.ask(&ratio_query(r, w, q_w, tau)?)?;
            Ok((v * q_w * sinh2(eps) + q_w, 1))
        },
        rng,
    )
}

/// `p(w) = Pr_{z~dist}[R(z) = w]` for every output.
pub fn randomizer_pushforward<U, T: Real>(r: &FiniteRandomizer<U, T>, dist: &FiniteDistribution<U, T>) -> Result<Vec<T>>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    let mut p = vec![T::zero(); r.outputs().len()];
    for (z, &wz) in dist.support().iter().zip(dist.weights()) {
        for (pw, &rw) in p.iter_mut().zip(r.row(z)?) {
            *pw += wz * rw;
        }
    }
    Ok(p)
}

/// Exact law of [`rejection_simulate`] against an oracle whose answer to a
/// query depends only on the query (exact, or perturbed by tag), together
/// with the expected number of iterations.
pub fn rejection_exact_law<U, T: Real>(
    r: &FiniteRandomizer<U, T>,
    dist: &FiniteDistribution<U, T>,
    t: usize,
    beta: T,
    oracle: &SqOracle,
) -> Result<(Vec<T>, T)>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    if matches!(oracle, SqOracle::Sampled { .. } | SqOracle::Adversarial(Perturbation::ByIndex(_))) {
        return Err(Error::param("oracle", "exact law needs answers that depend only on the query"));
    }
    let eps = r.epsilon();
    let (phi, tau) = rejection_parameters(eps, t, beta)?;
    let q_row = r.row(r.reference())?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mass = Vec::with_capacity(q_row.len());
    for (w, &q_w) in q_row.iter().enumerate() {
        if q_w == T::zero() {
            mass.push(T::zero());
            continue;
        }
        let pt = if eps == T::zero() {
            q_w
        } else {
            sq_answer(oracle, dist, &ratio_query(r, w, q_w, tau)?, 0, &mut rng)? * q_w * sinh2(eps) + q_w
        };
        mass.push(q_w * accept_probability(pt, q_w, phi, eps)?);
    }
    let total: T = mass.iter().copied().sum();
    Ok((mass.into_iter().map(|m| m / total).collect(), total.recip()))
}

/// Total-variation distance between two probability vectors.
pub fn total_variation<T: Real>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).map(|(a, b)| (*a - *b).abs()).sum::<T>() / T::lit(2.0)
}

/// Per-entry state for simulating a sequence of randomizers applied to the
/// same (unknown) entry, conditioning on the outputs already produced.
#[derive(Clone, Debug)]
pub struct RejectionState<U, T = f64> {
    history: Vec<(FiniteRandomizer<U, T>, usize)>,
    t: usize,
    beta: T,
    phi: T,
    cap: T,
    spent: T,
}

impl<U, T: Real> RejectionState<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    /// `cap` bounds the total ε of randomizers applied to the entry.
    pub fn new(cap: T, t: usize, beta: T) -> Result<Self> {
        let (phi, _) = rejection_parameters(cap, t, beta)?;
        Ok(Self { history: Vec::new(), t, beta, phi, cap, spent: T::zero() })
    }

    pub fn history(&self) -> impl Iterator<Item = (&FiniteRandomizer<U, T>, usize)> {
        self.history.iter().map(|(r, a)| (r, *a))
    }

    pub fn spent(&self) -> T {
        self.spent
    }

    pub fn phi(&self) -> T {
        self.phi
    }

    /// Tolerance for the next randomizer with privacy `eps_k`: the
    /// single-randomizer value when there is no history, otherwise
    /// `β/(9e^{2ε′}t)` with `ε′` the cumulative budget including `eps_k`.
    pub fn tau_for(&self, eps_k: T) -> T {
        if self.history.is_empty() {
            self.phi / (T::lit(2.0) * eps_k).exp()
        } else {
            self.phi / (T::lit(3.0) * (T::lit(2.0) * (self.spent + eps_k)).exp())
        }
    }

    fn history_prob(&self, z: &U) -> Result<T> {
        self.history.iter().try_fold(T::one(), |acc, (r, a)| Ok(acc * r.prob(z, *a)?))
    }

    /// Records an output produced outside the simulation.
    pub fn push(&mut self, r: FiniteRandomizer<U, T>, answer: usize) {
        self.spent += r.epsilon();
        self.history.push((r, answer));
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn beta(&self) -> T {
        self.beta
    }
}

/// Simulates `r` on the entry described by `state`, with output law
/// `Pr[R(z) = w | earlier outputs]`. Each iteration asks for the two
/// products `r_1 = Π Pr[R_j(z)=a_j]·Pr[R(z)=w]` and `r_2 = Π Pr[R_j(z)=a_j]`
/// in one round and sets `p̃ = p̂_1/p̂_2`.
pub fn rejection_simulate_conditioned<U, T: Real, A, R>(
    state: &mut RejectionState<U, T>,
    r: &FiniteRandomizer<U, T>,
    sq: &mut A,
    rng: &mut R,
) -> Result<RejectionRun>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    A: SqAccess<U, T>,
    R: Rng + ?Sized,
{
    let eps_k = r.epsilon();
    if state.spent + eps_k > state.cap * (T::one() + T::check_eps()) {
        return Err(Error::BudgetExceeded {
            index: 0,
            spent: state.spent.as_f64(),
            requested: eps_k.as_f64(),
            cap: state.cap.as_f64(),
        });
    }
    let reference = r.reference().clone();
    let r2_ref = state.history_prob(&reference)?;
    if r2_ref == T::zero() {
        return Err(Error::ImpossibleHistory);
    }
    let tau = state.tau_for(eps_k);
    let eps1 = state.spent + eps_k;
    let eps2 = state.spent;
    let q_row = r.row(&reference)?.to_vec();
    let hist = Arc::new(state.history.clone());
    let phi = state.phi;
    let run = rejection_loop(
        &q_row,
        eps_k,
        phi,
        |w| {
            let q_w = q_row[w];
            let r1_ref = r2_ref * q_w;
            if eps1 == T::zero() {
                return Ok((q_w, 0));
            }
            let (h1, rk) = (hist.clone(), r.clone());
            let s1 = r1_ref * sinh2(eps1);
            let g1: QueryFn<U, T> = Arc::new(move |z: &U| {
                let prod = h1.iter().fold(T::one(), |acc, (rj, a)| acc * rj.prob(z, *a).unwrap_or(T::nan()));
                (prod * rk.prob(z, w).unwrap_or(T::nan()) - r1_ref) / s1
            });
            let mut queries = vec![SqQuery::new(g1, T::one(), tau)?.tagged(format!("{}:r1:w={w}", r.id()))];
            if eps2 > T::zero() {
                let h2 = hist.clone();
                let s2 = r2_ref * sinh2(eps2);
                let g2: QueryFn<U, T> = Arc::new(move |z: &U| {
                    let prod = h2.iter().fold(T::one(), |acc, (rj, a)| acc * rj.prob(z, *a).unwrap_or(T::nan()));
                    (prod - r2_ref) / s2
                });
                queries.push(SqQuery::new(g2, T::one(), tau)?.tagged(format!("{}:r2", r.id())));
            }
            let answers = sq.round(&queries)?;
            let p1 = r1_ref * (answers[0] * sinh2(eps1) + T::one());
            let p2 = if eps2 > T::zero() { r2_ref * (answers[1] * sinh2(eps2) + T::one()) } else { r2_ref };
            Ok((p1 / p2, queries.len()))
        },
        rng,
    )?;
    state.push(r.clone(), run.output);
    Ok(run)
}

/// Exact joint law of the outputs of `rs` applied in order to one entry
/// drawn from `dist`, indexed in mixed radix (first randomizer least
/// significant).
pub fn joint_output_law<U, T: Real>(rs: &[FiniteRandomizer<U, T>], dist: &FiniteDistribution<U, T>) -> Result<Vec<T>>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    let sizes: Vec<usize> = rs.iter().map(|r| r.outputs().len()).collect();
    let total: usize = sizes.iter().product();
    let mut law = vec![T::zero(); total];
    for (z, &wz) in dist.support().iter().zip(dist.weights()) {
        let rows = rs.iter().map(|r| r.row(z)).collect::<Result<Vec<_>>>()?;
        for (idx, cell) in law.iter_mut().enumerate() {
            let mut rest = idx;
            let mut p = wz;
            for (row, &k) in rows.iter().zip(&sizes) {
                p *= row[rest % k];
                rest /= k;
            }
            *cell += p;
        }
    }
    Ok(law)
}

/// Counters from [`simulate_local_algorithm`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimulationStats {
    pub invocations: usize,
    pub iterations: usize,
    pub sq_queries: usize,
    pub sq_rounds: usize,
}

/// A local algorithm, written against [`LrAccess`].
pub trait LocalAlgorithm<U, T> {
    type Output;

    fn run<A: LrAccess<U, T>>(&mut self, lr: &mut A) -> Result<Self::Output>;
}

/// An [`LrAccess`] whose entries are fresh draws from the distribution
/// behind an [`SqAccess`], simulated by rejection sampling.
///
/// Single invocations run the sequential sampler, one SQ round per
/// iteration. A batch of first invocations on distinct entries is answered
/// from a single SQ round holding one query per (randomizer, output) pair,
/// so a noninteractive local algorithm yields a nonadaptive SQ algorithm.
pub struct SqBackedLr<'a, U, T, A, R: ?Sized> {
    sq: &'a mut A,
    rng: &'a mut R,
    states: Vec<RejectionState<U, T>>,
    stats: SimulationStats,
}

impl<'a, U, T: Real, A, R> SqBackedLr<'a, U, T, A, R>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    A: SqAccess<U, T>,
    R: Rng + ?Sized,
{
    /// `n` entries, each with budget `epsilon`; `t` is the total number of
    /// invocations the algorithm makes.
    pub fn new(sq: &'a mut A, n: usize, epsilon: T, t: usize, beta: T, rng: &'a mut R) -> Result<Self> {
        let state = RejectionState::new(epsilon, t, beta)?;
        Ok(Self { sq, rng, states: vec![state; n], stats: SimulationStats::default() })
    }

    pub fn stats(&self) -> SimulationStats {
        self.stats
    }
}

impl<U, T: Real, A, R> LrAccess<U, T> for SqBackedLr<'_, U, T, A, R>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    A: SqAccess<U, T>,
    R: Rng + ?Sized,
{
    fn len(&self) -> usize {
        self.states.len()
    }

    fn invoke(&mut self, i: usize, r: &Randomizer<U, T>) -> Result<RandOutput<T>> {
        let fr = r.as_finite()?;
        let n = self.states.len();
        let state = self.states.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len: n })?;
        let mut counted = CountingSq { inner: &mut *self.sq, rounds: 0 };
        let run = rejection_simulate_conditioned(state, fr, &mut counted, self.rng)?;
        self.stats.invocations += 1;
        self.stats.iterations += run.iterations;
        self.stats.sq_queries += run.sq_queries;
        self.stats.sq_rounds += counted.rounds;
        Ok(RandOutput::Symbol(run.output))
    }

    fn invoke_batch(&mut self, batch: &[(usize, Randomizer<U, T>)]) -> Result<Vec<RandOutput<T>>> {
        let mut seen = std::collections::HashSet::new();
        let fresh = batch.iter().all(|(i, _)| self.states.get(*i).is_some_and(|s| s.history.is_empty()) && seen.insert(*i));
        if !fresh {
            return batch.iter().map(|(i, r)| self.invoke(*i, r)).collect();
        }
        let finite = batch.iter().map(|(_, r)| r.as_finite().cloned()).collect::<Result<Vec<_>>>()?;
        let mut queries = Vec::new();
        let mut slots: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, (fr, (i, _))) in finite.iter().zip(batch).enumerate() {
            let state = &self.states[*i];
            let eps = fr.epsilon();
            if eps > state.cap * (T::one() + T::check_eps()) {
                return Err(Error::BudgetExceeded { index: *i, spent: 0.0, requested: eps.as_f64(), cap: state.cap.as_f64() });
            }
            if eps == T::zero() {
                continue;
            }
            let tau = state.tau_for(eps);
            let q_row = fr.row(fr.reference())?;
            for (w, &q_w) in q_row.iter().enumerate() {
                if q_w > T::zero() {
                    slots.insert((k, w), queries.len());
                    queries.push(ratio_query(fr, w, q_w, tau)?);
                }
            }
        }
        let answers = if queries.is_empty() { Vec::new() } else { self.sq.round(&queries)? };
        if !queries.is_empty() {
            self.stats.sq_rounds += 1;
            self.stats.sq_queries += queries.len();
        }
        let mut out = Vec::with_capacity(batch.len());
        for (k, (fr, (i, _))) in finite.iter().zip(batch).enumerate() {
            let eps = fr.epsilon();
            let q_row = fr.row(fr.reference())?.to_vec();
            let phi = self.states[*i].phi;
            let run = rejection_loop(
                &q_row,
                eps,
                phi,
                |w| {
                    let q_w = q_row[w];
                    Ok(match slots.get(&(k, w)) {
                        Some(&s) => (answers[s] * q_w * sinh2(eps) + q_w, 0),
                        None => (q_w, 0),
                    })
                },
                self.rng,
            )?;
            self.states[*i].push(fr.clone(), run.output);
            self.stats.invocations += 1;
            self.stats.iterations += run.iterations;
            out.push(RandOutput::Symbol(run.output));
        }
        Ok(out)
    }
}

struct CountingSq<'a, A> {
    inner: &'a mut A,
    rounds: usize,
}

impl<U, T, A: SqAccess<U, T>> SqAccess<U, T> for CountingSq<'_, A> {
    fn round(&mut self, queries: &[SqQuery<U, T>]) -> Result<Vec<T>> {
        self.rounds += 1;
        self.inner.round(queries)
    }
}

/// Runs a local algorithm over `n` simulated entries using only `sq`.
pub fn simulate_local_algorithm<L, U, T: Real, A, R>(
    alg: &mut L,
    n: usize,
    epsilon: T,
    t: usize,
    beta: T,
    sq: &mut A,
    rng: &mut R,
) -> Result<(L::Output, SimulationStats)>
where
    L: LocalAlgorithm<U, T>,
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    A: SqAccess<U, T>,
    R: Rng + ?Sized,
{
    let mut lr = SqBackedLr::new(sq, n, epsilon, t, beta, rng)?;
    let out = alg.run(&mut lr)?;
    Ok((out, lr.stats()))
}
