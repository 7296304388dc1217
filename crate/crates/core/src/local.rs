//! The local model: per-entry randomizers, the LR oracle that applies them
//! under a per-index budget, and the simulation of SQ algorithms by
//! Laplace-noised averaging over fresh slices of the database.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::dp::{BudgetLedger, FiniteMechanism, Laplace};
use crate::error::{Error, Result};
use crate::learning::{Database, Example};
use crate::scalar::{sample_index, Real};
use crate::sq::{QueryFn, SqAccess, SqLearner, SqQuery};

/// Default constant `c` in `n′ = c·ln(1/β)·b²/(ε²τ²)`.
pub const DEFAULT_SIM_C: f64 = 32.0;

type Encoder<U> = Arc<dyn Fn(&U) -> Result<usize> + Send + Sync>;

/// A randomizer with a finite output set and exactly known transition
/// probabilities. Inputs are mapped to table rows by an encoder.
#[derive(Clone)]
pub struct FiniteRandomizer<U, T = f64> {
    id: String,
    reference: U,
    encode: Encoder<U>,
    outputs: Arc<Vec<String>>,
    table: Arc<Vec<Vec<T>>>,
    epsilon: T,
}

impl<U: fmt::Debug, T: fmt::Debug> fmt::Debug for FiniteRandomizer<U, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteRandomizer")
            .field("id", &self.id)
            .field("reference", &self.reference)
            .field("outputs", &self.outputs)
            .field("table", &self.table)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

fn validate_table<T: Real>(table: &[Vec<T>], width: usize, epsilon: T) -> Result<()> {
    if table.is_empty() || width == 0 {
        return Err(Error::param("table", "needs at least one input and one output"));
    }
    let tol = T::lit(1e-9);
    for (u, row) in table.iter().enumerate() {
        if row.len() != width {
            return Err(Error::LengthMismatch { expected: width, got: row.len() });
        }
        if row.iter().any(|p| !(*p >= T::zero())) {
            return Err(Error::NotStochastic(format!("row {u} has a negative entry")));
        }
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::NotStochastic(format!("row {u} sums to {s}")));
        }
    }
    let bound = epsilon.exp() * (T::one() + T::check_eps());
    for w in 0..width {
        let col = table.iter().map(|row| row[w]);
        let hi = col.clone().fold(T::zero(), T::max);
        let lo = col.fold(T::infinity(), T::min);
        if hi > T::zero() && !(hi <= bound * lo) {
            return Err(Error::NotPrivate {
                epsilon: epsilon.as_f64(),
                detail: format!("output {w}: max/min transition ratio {} exceeds e^eps", (hi / lo).as_f64()),
            });
        }
    }
    Ok(())
}

impl<U, T: Real> FiniteRandomizer<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    /// Randomizer on the explicit input list `inputs`; row `k` of `table` is
    /// the output law on `inputs[k]`. The first input is the reference.
    pub fn new(
        id: impl Into<String>,
        inputs: Vec<U>,
        outputs: Vec<String>,
        table: Vec<Vec<T>>,
        epsilon: T,
    ) -> Result<Self> {
        if inputs.len() != table.len() {
            return Err(Error::LengthMismatch { expected: inputs.len(), got: table.len() });
        }
        let reference = inputs.first().cloned().ok_or_else(|| Error::param("inputs", "must be nonempty"))?;
        let list = Arc::new(inputs);
        let encode: Encoder<U> = Arc::new(move |u: &U| {
            list.iter()
                .position(|v| v == u)
                .ok_or_else(|| Error::param("input", format!("{u:?} outside the randomizer's domain")))
        });
        Self::with_encoder(id, reference, encode, outputs, table, epsilon)
    }

    pub fn with_encoder(
        id: impl Into<String>,
        reference: U,
        encode: Encoder<U>,
        outputs: Vec<String>,
        table: Vec<Vec<T>>,
        epsilon: T,
    ) -> Result<Self> {
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::param("epsilon", format!("must be finite and >= 0, got {epsilon}")));
        }
        validate_table(&table, outputs.len(), epsilon)?;
        let r = Self {
            id: id.into(),
            reference,
            encode,
            outputs: Arc::new(outputs),
            table: Arc::new(table),
            epsilon,
        };
        r.row(&r.reference)?;
        Ok(r)
    }

    /// The same randomizer applied to `f(v)`.
    pub fn map_input<V>(self, reference: V, f: impl Fn(&V) -> U + Send + Sync + 'static) -> FiniteRandomizer<V, T>
    where
        V: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
    {
        let inner = self.encode.clone();
        FiniteRandomizer {
            id: self.id,
            reference,
            encode: Arc::new(move |v: &V| inner(&f(v))),
            outputs: self.outputs,
            table: self.table,
            epsilon: self.epsilon,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn reference(&self) -> &U {
        &self.reference
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn table(&self) -> &[Vec<T>] {
        &self.table
    }

    pub fn row(&self, u: &U) -> Result<&[T]> {
        let k = (self.encode)(u)?;
        self.table.get(k).map(|r| r.as_slice()).ok_or(Error::IndexOutOfRange { index: k, len: self.table.len() })
    }

    /// `Pr[R(u) = w]`.
    pub fn prob(&self, u: &U, w: usize) -> Result<T> {
        self.row(u)?.get(w).copied().ok_or(Error::IndexOutOfRange { index: w, len: self.outputs.len() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, u: &U, rng: &mut R) -> Result<usize> {
        Ok(sample_index(self.row(u)?, rng))
    }
}

impl<T: Real> FiniteRandomizer<bool, T> {
    /// Keeps the bit with probability `e^ε/(1+e^ε)`.
    pub fn randomized_response(epsilon: T) -> Result<Self> {
        let keep = epsilon.exp() / (T::one() + epsilon.exp());
        Self::bit_response(format!("rr(eps={epsilon})"), keep, epsilon)
    }

    /// Truthful with probability 2/3; `ε = ln 2`.
    pub fn warner() -> Result<Self> {
        Self::bit_response("warner", T::lit(2.0 / 3.0), T::lit(2.0).ln())
    }

    fn bit_response(id: impl Into<String>, keep: T, epsilon: T) -> Result<Self> {
        let flip = T::one() - keep;
        Self::new(
            id,
            vec![false, true],
            vec!["0".into(), "1".into()],
            vec![vec![keep, flip], vec![flip, keep]],
            epsilon,
        )
    }
}

impl<U, T: Real> FiniteRandomizer<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    /// k-ary randomized response: the true symbol with probability
    /// `e^ε/(e^ε+k-1)`, each other symbol with `1/(e^ε+k-1)`.
    pub fn k_ary_response(inputs: Vec<U>, epsilon: T) -> Result<Self> {
        let k = inputs.len();
        let denom = epsilon.exp() + T::from_usize_lossy(k.saturating_sub(1));
        let table = (0..k)
            .map(|u| (0..k).map(|w| if u == w { epsilon.exp() / denom } else { T::one() / denom }).collect())
            .collect();
        let outputs = inputs.iter().map(|u| format!("{u:?}")).collect();
        Self::new(format!("k-rr(k={k},eps={epsilon})"), inputs, outputs, table, epsilon)
    }

    /// The same output law on every input.
    pub fn input_independent(inputs: Vec<U>, outputs: Vec<String>, probs: Vec<T>) -> Result<Self> {
        let table = vec![probs; inputs.len()];
        Self::new("input-independent", inputs, outputs, table, T::zero())
    }
}

impl<U, T: Real> FiniteMechanism<U, T> for FiniteRandomizer<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    type Outcome = usize;

    fn outcome_space(&self, _u: &U) -> Vec<usize> {
        (0..self.outputs.len()).collect()
    }

    fn exact_distribution(&self, u: &U) -> Option<Result<Vec<T>>> {
        Some(self.row(u).map(|r| r.to_vec()))
    }

    fn sample<R: Rng + ?Sized>(&self, u: &U, rng: &mut R) -> Result<usize> {
        FiniteRandomizer::sample(self, u, rng)
    }
}

/// `R_g(u) = g(u) + Lap(2b/ε)` for `g` with values in `[-b, b]`.
#[derive(Clone)]
pub struct LaplaceRandomizer<U, T = f64> {
    id: String,
    g: QueryFn<U, T>,
    b: T,
    epsilon: T,
    noise: Laplace<T>,
}

impl<U, T: fmt::Debug> fmt::Debug for LaplaceRandomizer<U, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LaplaceRandomizer").field("id", &self.id).field("b", &self.b).field("epsilon", &self.epsilon).finish()
    }
}

impl<U, T: Real> LaplaceRandomizer<U, T> {
    pub fn b(&self) -> T {
        self.b
    }

    pub fn noise_scale(&self) -> T {
        self.noise.scale()
    }

    pub fn query_value(&self, u: &U) -> Result<T> {
        let v = (self.g)(u);
        if !(v.abs() <= self.b * (T::one() + T::check_eps())) {
            return Err(Error::QueryOutOfRange { value: v.as_f64(), bound: self.b.as_f64() });
        }
        Ok(v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, u: &U, rng: &mut R) -> Result<T> {
        Ok(self.query_value(u)? + self.noise.sample(rng))
    }
}

/// Builds `R_g` with noise scale `2b/ε`.
pub fn laplace_query_randomizer<U, T: Real>(g: QueryFn<U, T>, b: T, epsilon: T) -> Result<LaplaceRandomizer<U, T>> {
    if !(b > T::zero()) || !b.is_finite() {
        return Err(Error::param("b", format!("must be positive, got {b}")));
    }
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    let noise = Laplace::new(T::lit(2.0) * b / epsilon)?;
    Ok(LaplaceRandomizer { id: format!("laplace(b={b},eps={epsilon})"), g, b, epsilon, noise })
}

/// A local randomizer.
#[derive(Clone, Debug)]
pub enum Randomizer<U, T = f64> {
    Finite(FiniteRandomizer<U, T>),
    Laplace(LaplaceRandomizer<U, T>),
}

/// One output of a randomizer: an output-symbol index or a real value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RandOutput<T = f64> {
    Symbol(usize),
    Real(T),
}

impl<T: Real> RandOutput<T> {
    pub fn symbol(&self) -> Option<usize> {
        match self {
            RandOutput::Symbol(w) => Some(*w),
            RandOutput::Real(_) => None,
        }
    }

    pub fn real(&self) -> Option<T> {
        match self {
            RandOutput::Real(v) => Some(*v),
            RandOutput::Symbol(_) => None,
        }
    }
}

impl<U, T: Real> Randomizer<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    pub fn id(&self) -> &str {
        match self {
            Randomizer::Finite(r) => &r.id,
            Randomizer::Laplace(r) => &r.id,
        }
    }

    pub fn epsilon(&self) -> T {
        match self {
            Randomizer::Finite(r) => r.epsilon,
            Randomizer::Laplace(r) => r.epsilon,
        }
    }

    /// Transparent randomizers expose exact transition probabilities.
    pub fn is_transparent(&self) -> bool {
        matches!(self, Randomizer::Finite(_))
    }

    pub fn as_finite(&self) -> Result<&FiniteRandomizer<U, T>> {
        match self {
            Randomizer::Finite(r) => Ok(r),
            Randomizer::Laplace(_) => Err(Error::NotTransparent),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, u: &U, rng: &mut R) -> Result<RandOutput<T>> {
        match self {
            Randomizer::Finite(r) => r.sample(u, rng).map(RandOutput::Symbol),
            Randomizer::Laplace(r) => r.sample(u, rng).map(RandOutput::Real),
        }
    }
}

impl<U, T> From<FiniteRandomizer<U, T>> for Randomizer<U, T> {
    fn from(r: FiniteRandomizer<U, T>) -> Self {
        Randomizer::Finite(r)
    }
}

impl<U, T> From<LaplaceRandomizer<U, T>> for Randomizer<U, T> {
    fn from(r: LaplaceRandomizer<U, T>) -> Self {
        Randomizer::Laplace(r)
    }
}

/// One line of an LR-oracle trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LrTraceRecord<T = f64> {
    pub seq: usize,
    pub index: usize,
    pub randomizer: String,
    pub epsilon: T,
    pub output: RandOutput<T>,
    /// Invocations issued together share a batch number.
    pub batch: usize,
}

/// Access to a database only through local randomizers.
pub trait LrAccess<U, T> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn invoke(&mut self, i: usize, r: &Randomizer<U, T>) -> Result<RandOutput<T>>;

    /// Invocations prepared together, before any of their answers is seen.
    fn invoke_batch(&mut self, batch: &[(usize, Randomizer<U, T>)]) -> Result<Vec<RandOutput<T>>> {
        batch.iter().map(|(i, r)| self.invoke(*i, r)).collect()
    }
}

/// The LR oracle over a database, with per-index budget accounting.
#[derive(Clone, Debug)]
pub struct LrOracle<U, T = f64> {
    entries: Vec<U>,
    ledger: BudgetLedger<T>,
    trace: Vec<LrTraceRecord<T>>,
    tracing: bool,
    batches: usize,
}

impl<U, T: Real> LrOracle<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    pub fn new(entries: Vec<U>, cap: T) -> Result<Self> {
        Ok(Self { entries, ledger: BudgetLedger::new(cap)?, trace: Vec::new(), tracing: true, batches: 0 })
    }

    /// Stops recording invocation records; the ledger is still kept.
    pub fn untraced(mut self) -> Self {
        self.tracing = false;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ledger(&self) -> &BudgetLedger<T> {
        &self.ledger
    }

    pub fn trace(&self) -> &[LrTraceRecord<T>] {
        &self.trace
    }

    /// Number of distinct batches issued so far.
    pub fn batches(&self) -> usize {
        self.batches
    }

    fn invoke_in_batch<R: Rng + ?Sized>(&mut self, i: usize, r: &Randomizer<U, T>, batch: usize, rng: &mut R) -> Result<RandOutput<T>> {
        let u = self.entries.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.entries.len() })?;
        let eps = r.epsilon();
        if self.ledger.would_exceed(i, eps) {
            return Err(Error::BudgetExceeded {
                index: i,
                spent: self.ledger.spent(i).as_f64(),
                requested: eps.as_f64(),
                cap: self.ledger.cap().as_f64(),
            });
        }
        let output = r.apply(u, rng)?;
        self.ledger.charge(i, eps)?;
        if self.tracing {
            self.trace.push(LrTraceRecord { seq: self.trace.len(), index: i, randomizer: r.id().to_string(), epsilon: eps, output, batch });
        }
        Ok(output)
    }

    /// Applies `r` to entry `i`, charging `r`'s ε to that index.
    pub fn invoke<R: Rng + ?Sized>(&mut self, i: usize, r: &Randomizer<U, T>, rng: &mut R) -> Result<RandOutput<T>> {
        let batch = self.batches;
        self.batches += 1;
        self.invoke_in_batch(i, r, batch, rng)
    }

    /// Runs a prepared batch. Budgets for the whole batch are checked before
    /// any randomizer is applied.
    pub fn invoke_batch<R: Rng + ?Sized>(&mut self, batch: &[(usize, Randomizer<U, T>)], rng: &mut R) -> Result<Vec<RandOutput<T>>> {
        let mut pending: Vec<(usize, T)> = Vec::with_capacity(batch.len());
        for (i, r) in batch {
            if *i >= self.entries.len() {
                return Err(Error::IndexOutOfRange { index: *i, len: self.entries.len() });
            }
            pending.push((*i, r.epsilon()));
        }
        pending.sort_unstable_by_key(|&(i, _)| i);
        pending.dedup_by(|later, first| {
            let same = later.0 == first.0;
            if same {
                first.1 = first.1 + later.1;
            }
            same
        });
        for &(i, eps) in &pending {
            if self.ledger.would_exceed(i, eps) {
                return Err(Error::BudgetExceeded {
                    index: i,
                    spent: self.ledger.spent(i).as_f64(),
                    requested: eps.as_f64(),
                    cap: self.ledger.cap().as_f64(),
                });
            }
        }
        let id = self.batches;
        self.batches += 1;
        batch.iter().map(|(i, r)| self.invoke_in_batch(*i, r, id, rng)).collect()
    }

    pub fn write_trace_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.trace {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// An [`LrAccess`] view that draws randomness from `rng`.
    pub fn session<'a, R: Rng + ?Sized>(&'a mut self, rng: &'a mut R) -> LrSession<'a, U, T, R> {
        LrSession { oracle: self, rng }
    }
}

impl<T: Real> LrOracle<Example, T> {
    pub fn from_database(z: &Database, cap: T) -> Result<Self> {
        Self::new(z.entries().to_vec(), cap)
    }
}

pub struct LrSession<'a, U, T, R: ?Sized> {
    oracle: &'a mut LrOracle<U, T>,
    rng: &'a mut R,
}

impl<U, T: Real, R: Rng + ?Sized> LrAccess<U, T> for LrSession<'_, U, T, R>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    fn len(&self) -> usize {
        self.oracle.len()
    }

    fn invoke(&mut self, i: usize, r: &Randomizer<U, T>) -> Result<RandOutput<T>> {
        self.oracle.invoke(i, r, self.rng)
    }

    fn invoke_batch(&mut self, batch: &[(usize, Randomizer<U, T>)]) -> Result<Vec<RandOutput<T>>> {
        self.oracle.invoke_batch(batch, self.rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PlanMode {
    /// All queries are fixed before any answer is returned.
    Noninteractive,
    Interactive,
}

/// A list of LR invocations. A noninteractive plan runs exactly once, as a
/// single batch, and cannot be extended afterwards.
#[derive(Clone, Debug)]
pub struct QueryPlan<U, T = f64> {
    mode: PlanMode,
    queries: Vec<(usize, Randomizer<U, T>)>,
    executed: usize,
    frozen: bool,
}

impl<U, T: Real> QueryPlan<U, T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    pub fn new(mode: PlanMode) -> Self {
        Self { mode, queries: Vec::new(), executed: 0, frozen: false }
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn push(&mut self, i: usize, r: impl Into<Randomizer<U, T>>) -> Result<()> {
        if self.frozen {
            return Err(Error::PlanFrozen);
        }
        self.queries.push((i, r.into()));
        Ok(())
    }

    /// Runs the queries added since the last call.
    pub fn execute<A: LrAccess<U, T>>(&mut self, lr: &mut A) -> Result<Vec<RandOutput<T>>> {
        if self.frozen {
            return Err(Error::PlanFrozen);
        }
        let out = lr.invoke_batch(&self.queries[self.executed..])?;
        self.executed = self.queries.len();
        if self.mode == PlanMode::Noninteractive {
            self.frozen = true;
        }
        Ok(out)
    }
}

/// `⌈c·ln(1/β)·b²/(ε²τ²)⌉`.
pub fn sq_query_sample_size<T: Real>(b: T, epsilon: T, tau: T, beta: T, c: T) -> Result<usize> {
    for (name, v) in [("b", b), ("epsilon", epsilon), ("tau", tau), ("c", c)] {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    if !(beta > T::zero() && beta < T::one()) {
        return Err(Error::param("beta", "must lie in (0, 1)"));
    }
    let n = (c * beta.recip().ln() * b * b / (epsilon * epsilon * tau * tau)).ceil();
    Ok(n.to_usize().ok_or_else(|| Error::param("n", "overflow"))?.max(1))
}

/// Estimates `E[g]` from the fresh entries `start..start+n_prime`: the mean
/// of `R_g` applied once to each.
pub fn simulate_sq_query<U, T: Real, R: Rng + ?Sized>(
    oracle: &mut LrOracle<U, T>,
    start: usize,
    n_prime: usize,
    g: QueryFn<U, T>,
    b: T,
    epsilon: T,
    rng: &mut R,
) -> Result<T>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    if n_prime == 0 {
        return Err(Error::param("n_prime", "must be at least 1"));
    }
    let end = start.checked_add(n_prime).ok_or(Error::IndexOutOfRange { index: usize::MAX, len: oracle.len() })?;
    if end > oracle.len() {
        return Err(Error::IndexOutOfRange { index: end - 1, len: oracle.len() });
    }
    if let Some(i) = (start..end).find(|&i| oracle.ledger.spent(i) > T::zero()) {
        return Err(Error::IndexReused(i));
    }
    let r: Randomizer<U, T> = laplace_query_randomizer(g, b, epsilon)?.into();
    let batch: Vec<(usize, Randomizer<U, T>)> = (start..end).map(|i| (i, r.clone())).collect();
    let outs = oracle.invoke_batch(&batch, rng)?;
    let total: T = outs.iter().map(|o| o.real().expect("laplace output")).sum();
    Ok(total / T::from_usize_lossy(n_prime))
}

/// Answers SQ queries from an LR oracle, spending a fresh slice of entries
/// per query. All queries of one round form one LR batch.
pub struct LocalSqSimulator<'a, U, T, R: ?Sized> {
    oracle: &'a mut LrOracle<U, T>,
    rng: &'a mut R,
    epsilon: T,
    beta_per_query: T,
    c: T,
    next: usize,
    rounds: usize,
    queries: usize,
}

impl<'a, U, T: Real, R: Rng + ?Sized> LocalSqSimulator<'a, U, T, R>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    /// `t` is the total number of queries the learner will ask; each is
    /// simulated at confidence `β/t`.
    pub fn new(oracle: &'a mut LrOracle<U, T>, epsilon: T, beta: T, t: usize, c: T, rng: &'a mut R) -> Result<Self> {
        if t == 0 {
            return Err(Error::param("t", "must be at least 1"));
        }
        if !(beta > T::zero() && beta < T::one()) {
            return Err(Error::param("beta", "must lie in (0, 1)"));
        }
        Ok(Self {
            oracle,
            rng,
            epsilon,
            beta_per_query: beta / T::from_usize_lossy(t),
            c,
            next: 0,
            rounds: 0,
            queries: 0,
        })
    }

    pub fn entries_used(&self) -> usize {
        self.next
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn plan_mode(&self) -> PlanMode {
        if self.rounds <= 1 {
            PlanMode::Noninteractive
        } else {
            PlanMode::Interactive
        }
    }
}

impl<U, T: Real, R: Rng + ?Sized> SqAccess<U, T> for LocalSqSimulator<'_, U, T, R>
where
    U: Clone + PartialEq + fmt::Debug + Send + Sync + 'static,
{
    fn round(&mut self, queries: &[SqQuery<U, T>]) -> Result<Vec<T>> {
        let mut batch = Vec::new();
        let mut slices = Vec::with_capacity(queries.len());
        let mut next = self.next;
        for q in queries {
            let n_prime = sq_query_sample_size(q.b(), self.epsilon, q.tau(), self.beta_per_query, self.c)?;
            if next + n_prime > self.oracle.len() {
                return Err(Error::InsufficientSamples { required: next + n_prime, available: self.oracle.len() });
            }
            let r: Randomizer<U, T> = laplace_query_randomizer(q.g().clone(), q.b(), self.epsilon)?.into();
            batch.extend((next..next + n_prime).map(|i| (i, r.clone())));
            slices.push(n_prime);
            next += n_prime;
        }
        let mut plan = QueryPlan::new(PlanMode::Noninteractive);
        for (i, r) in batch {
            plan.push(i, r)?;
        }
        let outs = plan.execute(&mut self.oracle.session(&mut *self.rng))?;
        self.next = next;
        self.rounds += 1;
        self.queries += queries.len();
        let mut answers = Vec::with_capacity(queries.len());
        let mut pos = 0;
        for n_prime in slices {
            let total: T = outs[pos..pos + n_prime].iter().map(|o| o.real().expect("laplace output")).sum();
            answers.push(total / T::from_usize_lossy(n_prime));
            pos += n_prime;
        }
        Ok(answers)
    }
}

/// Bookkeeping from [`simulate_sq_learner`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalSimulationReport {
    pub rounds: usize,
    pub queries: usize,
    pub entries_used: usize,
    pub lr_batches: usize,
    pub mode: PlanMode,
}

/// Total entries needed to simulate queries with tolerances `taus`.
pub fn required_entries<T: Real>(taus: &[T], b: T, epsilon: T, beta: T, c: T) -> Result<usize> {
    if taus.is_empty() {
        return Ok(0);
    }
    let per = beta / T::from_usize_lossy(taus.len());
    taus.iter().map(|&tau| sq_query_sample_size(b, epsilon, tau, per, c)).sum()
}

/// Runs an SQ learner against an ε-local view of `z`, replacing each query
/// by [`simulate_sq_query`] on a fresh slice at confidence `β/t`.
pub fn simulate_sq_learner<L, T: Real, R: Rng + ?Sized>(
    learner: &mut L,
    z: &Database,
    epsilon: T,
    beta: T,
    t: usize,
    c: T,
    rng: &mut R,
) -> Result<(L::Output, LocalSimulationReport)>
where
    L: SqLearner<Example, T>,
{
    let mut oracle = LrOracle::from_database(z, epsilon)?;
    let (out, rounds, queries, used) = {
        let mut sim = LocalSqSimulator::new(&mut oracle, epsilon, beta, t, c, rng)?;
        let out = learner.learn(&mut sim)?;
        (out, sim.rounds(), sim.queries(), sim.entries_used())
    };
    let mode = if rounds <= 1 { PlanMode::Noninteractive } else { PlanMode::Interactive };
    Ok((out, LocalSimulationReport { rounds, queries, entries_used: used, lr_batches: oracle.batches(), mode }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{empirical_privacy_ratio, laplace_sum, VerifyMode};
    use crate::learning::LabelConvention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rr(eps: f64) -> Randomizer<bool> {
        FiniteRandomizer::randomized_response(eps).unwrap().into()
    }

    #[test]
    fn construction_checks_privacy_and_rows() {
        let bad_ratio = FiniteRandomizer::new(
            "bad",
            vec![0u8, 1],
            vec!["a".into(), "b".into()],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            1.0,
        );
        assert!(matches!(bad_ratio, Err(Error::NotPrivate { .. })));
        let not_stochastic =
            FiniteRandomizer::new("bad", vec![0u8], vec!["a".into(), "b".into()], vec![vec![0.5, 0.6]], 1.0);
        assert!(matches!(not_stochastic, Err(Error::NotStochastic(_))));
        let zero_vs_positive = FiniteRandomizer::new(
            "bad",
            vec![0u8, 1],
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            5.0,
        );
        assert!(matches!(zero_vs_positive, Err(Error::NotPrivate { .. })));
        let eps = 0.9f64;
        assert!(FiniteRandomizer::randomized_response(eps).is_ok());
        assert!(FiniteRandomizer::k_ary_response(vec!['a', 'b', 'c', 'd'], eps).is_ok());
        let w = FiniteRandomizer::<bool, f64>::warner().unwrap();
        assert!((w.epsilon() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn budget_is_enforced_per_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut o = LrOracle::new(vec![true, false], 1.0).unwrap();
        let r = rr(0.5);
        o.invoke(0, &r, &mut rng).unwrap();
        o.invoke(0, &r, &mut rng).unwrap();
        assert!(matches!(o.invoke(0, &r, &mut rng), Err(Error::BudgetExceeded { index: 0, .. })));
        o.invoke(1, &r, &mut rng).unwrap();
        assert!(matches!(o.invoke(2, &r, &mut rng), Err(Error::IndexOutOfRange { .. })));
        assert_eq!(o.ledger().spent(0), 1.0);
        assert_eq!(o.ledger().spent(1), 0.5);
        assert_eq!(o.trace().len(), 3);
    }

    #[test]
    fn batch_checked_before_applying() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut o = LrOracle::new(vec![true, false], 1.0).unwrap();
        let r = rr(0.6);
        let batch = vec![(0, r.clone()), (1, r.clone()), (0, r)];
        assert!(matches!(o.invoke_batch(&batch, &mut rng), Err(Error::BudgetExceeded { .. })));
        assert!(o.trace().is_empty());
        assert_eq!(o.ledger().spent(0), 0.0);
    }

    #[test]
    fn oracle_output_matches_transition_row() {
        let eps = 0.5f64;
        let fr = FiniteRandomizer::randomized_response(eps).unwrap();
        let r: Randomizer<bool> = fr.clone().into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut o = LrOracle::new(vec![true; n], eps).unwrap();
        let ones = (0..n).filter(|&i| o.invoke(i, &r, &mut rng).unwrap() == RandOutput::Symbol(1)).count();
        let p = fr.prob(&true, 1).unwrap();
        assert!((ones as f64 / n as f64 - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        let ratio = empirical_privacy_ratio(&fr, &false, &true, VerifyMode::Exact, &mut rng).unwrap();
        assert!((ratio.max_ratio - eps.exp()).abs() < 1e-12);
    }

    #[test]
    fn mapped_randomizer_reads_label() {
        let fr = FiniteRandomizer::<bool, f64>::randomized_response(1.0).unwrap();
        let e0 = Example::from_bit("01".parse().unwrap(), false, LabelConvention::ZeroOne);
        let e1 = Example::from_bit("01".parse().unwrap(), true, LabelConvention::ZeroOne);
        let m = fr.clone().map_input(e0.clone(), |e: &Example| e.bit());
        assert_eq!(m.row(&e1).unwrap(), fr.row(&true).unwrap());
        assert_eq!(m.row(&e0).unwrap(), fr.row(&false).unwrap());
    }

    #[test]
    fn laplace_randomizer_examples() {
        let g: QueryFn<u8, f64> = Arc::new(|_| 0.0);
        let r = laplace_query_randomizer(g, 1.0, 0.5).unwrap();
        assert_eq!(r.noise_scale(), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| r.sample(&0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03);
        let bad: QueryFn<u8, f64> = Arc::new(|_| 2.0);
        let r = laplace_query_randomizer(bad, 1.0, 0.5).unwrap();
        assert!(matches!(r.sample(&0, &mut rng), Err(Error::QueryOutOfRange { .. })));
        let g: QueryFn<u8, f64> = Arc::new(|_| 0.0);
        assert!(laplace_query_randomizer(g.clone(), 0.0, 0.5).is_err());
        assert!(laplace_query_randomizer(g, 1.0, 0.0).is_err());
    }

    struct BinnedLaplaceQuery {
        eps: f64,
        b: f64,
    }

    impl FiniteMechanism<f64, f64> for BinnedLaplaceQuery {
        type Outcome = usize;
        fn outcome_space(&self, _: &f64) -> Vec<usize> {
            (0..42).collect()
        }
        fn exact_distribution(&self, gu: &f64) -> Option<Result<Vec<f64>>> {
            let lap = Laplace::new(2.0 * self.b / self.eps).unwrap();
            let mut cuts = vec![f64::NEG_INFINITY];
            cuts.extend((-20..=20).map(|k| k as f64 * 0.5));
            cuts.push(f64::INFINITY);
            Some(Ok(cuts.windows(2).map(|w| lap.interval_prob(w[0] - gu, w[1] - gu)).collect()))
        }
        fn sample<R: Rng + ?Sized>(&self, _: &f64, _: &mut R) -> Result<usize> {
            unreachable!()
        }
    }

    #[test]
    fn laplace_randomizer_discretized_ratio_within_e_eps() {
        let (eps, b) = (0.5, 1.0);
        let m = BinnedLaplaceQuery { eps, b };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (u, v) in [(-b, b), (0.3, -0.7), (b, b)] {
            let r = empirical_privacy_ratio(&m, &u, &v, VerifyMode::Exact, &mut rng).unwrap();
            assert!(r.within(eps));
        }
    }

    #[test]
    fn noninteractive_plan_runs_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut o = LrOracle::new(vec![true, false, true], 2.0).unwrap();
        let mut plan = QueryPlan::new(PlanMode::Noninteractive);
        for i in 0..3 {
            plan.push(i, FiniteRandomizer::randomized_response(0.5).unwrap()).unwrap();
        }
        let out = plan.execute(&mut o.session(&mut rng)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(matches!(plan.push(0, FiniteRandomizer::randomized_response(0.5).unwrap()), Err(Error::PlanFrozen)));
        assert!(matches!(plan.execute(&mut o.session(&mut rng)), Err(Error::PlanFrozen)));
        assert_eq!(o.batches(), 1);
        assert!(o.trace().iter().all(|r| r.batch == 0));

        let mut inter = QueryPlan::new(PlanMode::Interactive);
        inter.push(0, FiniteRandomizer::randomized_response(0.5).unwrap()).unwrap();
        inter.execute(&mut o.session(&mut rng)).unwrap();
        inter.push(1, FiniteRandomizer::randomized_response(0.5).unwrap()).unwrap();
        assert_eq!(inter.execute(&mut o.session(&mut rng)).unwrap().len(), 1);
        assert_eq!(o.batches(), 3);
    }

    #[test]
    fn trace_exports_json_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut o = LrOracle::new(vec![true, false], 1.0).unwrap();
        o.invoke(0, &rr(0.5), &mut rng).unwrap();
        let g: QueryFn<bool, f64> = Arc::new(|&u| if u { 1.0 } else { -1.0 });
        o.invoke(1, &laplace_query_randomizer(g, 1.0, 0.5).unwrap().into(), &mut rng).unwrap();
        let mut buf = Vec::new();
        o.write_trace_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["index"], 0);
        assert!(lines[0]["output"].is_u64());
        assert!(lines[1]["output"].is_f64());
        assert_eq!(lines[1]["epsilon"], 0.5);
    }

    #[test]
    fn simulate_query_constant_and_fresh_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let mut o = LrOracle::new(vec![0u8; 2 * n], 1.0).unwrap();
        let one: QueryFn<u8, f64> = Arc::new(|_| 1.0);
        let v = simulate_sq_query(&mut o, 0, n, one.clone(), 1.0, 1.0, &mut rng).unwrap();
        assert!(v.is_finite());
        assert!(matches!(simulate_sq_query(&mut o, n - 1, 2, one.clone(), 1.0, 1.0, &mut rng), Err(Error::IndexReused(_))));
        let single = simulate_sq_query(&mut o, n, 1, one, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(o.trace().last().unwrap().output, RandOutput::Real(single));
    }

    #[test]
    fn simulate_query_tail_within_laplace_sum_bound() {
        let (n, delta, lambda) = (100usize, 2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one: QueryFn<u8, f64> = Arc::new(|_| 1.0);
        let reps = 5000;
        let mut bad = 0;
        for _ in 0..reps {
            let mut o = LrOracle::new(vec![0u8; n], 1.0).unwrap();
            let v = simulate_sq_query(&mut o, 0, n, one.clone(), 1.0, 1.0, &mut rng).unwrap();
            if (v - 1.0).abs() >= delta {
                bad += 1;
            }
        }
        assert!(bad as f64 / reps as f64 <= laplace_sum(n as u64, delta, lambda).unwrap() + 1e-12);
    }

    #[test]
    fn sample_size_formula() {
        let n = sq_query_sample_size(1.0, 0.5, 0.1, 0.05, 32.0).unwrap();
        assert_eq!(n, (32.0 * 20f64.ln() / (0.25 * 0.01)).ceil() as usize);
        assert!(sq_query_sample_size(1.0, 0.5, 0.0, 0.05, 32.0).is_err());
    }

    struct MeanOfLabels;

    impl SqLearner<Example, f64> for MeanOfLabels {
        type Output = f64;
        fn learn<A: SqAccess<Example, f64>>(&mut self, sq: &mut A) -> Result<f64> {
            let q = SqQuery::new(Arc::new(|e: &Example| e.y() as f64), 1.0, 0.2)?;
            Ok(sq.round(&[q])?[0])
        }
    }

    #[test]
    fn single_query_learner_is_noninteractive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = required_entries(&[0.2], 1.0, 1.0, 0.1, DEFAULT_SIM_C).unwrap();
        let ex: Vec<Example> = (0..n)
            .map(|i| Example::from_bit("1".parse().unwrap(), i % 4 == 0, LabelConvention::PlusMinus))
            .collect();
        let z = Database::from_examples(1, LabelConvention::PlusMinus, ex).unwrap();
        let (v, report) = simulate_sq_learner(&mut MeanOfLabels, &z, 1.0, 0.1, 1, DEFAULT_SIM_C, &mut rng).unwrap();
        assert!((v - 0.5).abs() <= 0.2);
        assert_eq!(report.mode, PlanMode::Noninteractive);
        assert_eq!(report.lr_batches, 1);
        assert_eq!(report.entries_used, n);
        let short = z.slice(0, n - 1).unwrap();
        assert!(matches!(
            simulate_sq_learner(&mut MeanOfLabels, &short, 1.0, 0.1, 1, DEFAULT_SIM_C, &mut rng),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
