//! Linear algebra over GF(2) on bit-packed vectors.
//!
//! Systems are reduced to row-echelon form with word-wide XOR; the solution
//! set is kept implicitly as a particular solution plus a null-space basis so
//! that spaces of size `2^d` never have to be materialised.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD: usize = 64;

/// Fixed-length vector over GF(2), packed into 64-bit words.
///
/// Bit `k` is the `k`-th character of the textual form, so `"10"` has bit 0
/// set. Bits past `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Self { len, words: vec![0; len.div_ceil(WORD)] })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut v = Self::zeros(bits.len())?;
        for (k, &b) in bits.iter().enumerate() {
            v.set(k, b);
        }
        Ok(v)
    }

    /// Vector whose bit `k` is bit `k` of `index` (least significant first).
    pub fn from_index(index: u64, len: usize) -> Result<Self> {
        let mut v = Self::zeros(len)?;
        if len < 64 && index >> len != 0 {
            return Err(Error::param("index", format!("{index} does not fit in {len} bits")));
        }
        v.words[0] = index;
        Ok(v)
    }

    /// Inverse of [`BitVector::from_index`]; only meaningful for `len <= 64`.
    pub fn to_index(&self) -> u64 {
        self.words[0]
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self> {
        let mut v = Self::zeros(len)?;
        for w in v.words.iter_mut() {
            *w = rng.gen();
        }
        v.mask_tail();
        Ok(v)
    }

    pub fn unit(len: usize, k: usize) -> Result<Self> {
        let mut v = Self::zeros(len)?;
        v.set(k, true);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; vectors have positive length by construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.len, "bit {k} out of range {}", self.len);
        (self.words[k / WORD] >> (k % WORD)) & 1 == 1
    }

    pub fn set(&mut self, k: usize, bit: bool) {
        assert!(k < self.len, "bit {k} out of range {}", self.len);
        let mask = 1u64 << (k % WORD);
        if bit {
            self.words[k / WORD] |= mask;
        } else {
            self.words[k / WORD] &= !mask;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn xor_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= *b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |k| self.get(k))
    }

    /// Inner product modulo 2: parity of the bitwise AND.
    pub fn dot(&self, other: &Self) -> Result<bool> {
        if self.len != other.len {
            return Err(Error::LengthMismatch { expected: self.len, got: other.len });
        }
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &Self) -> bool {
        let ones: u32 = self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum();
        ones & 1 == 1
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << rem) - 1;
        }
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl std::str::FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::BadBitString(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

/// Inner product modulo 2.
pub fn inner_product(x: &BitVector, r: &BitVector) -> Result<bool> {
    x.dot(r)
}

/// A system of equations `coeffs ⊙ r = rhs` over GF(2).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearSystem {
    dim: usize,
    rows: Vec<(BitVector, bool)>,
}

impl LinearSystem {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyVector);
        }
        Ok(Self { dim, rows: Vec::new() })
    }

    pub fn push(&mut self, coeffs: BitVector, rhs: bool) -> Result<()> {
        if coeffs.len() != self.dim {
            return Err(Error::LengthMismatch { expected: self.dim, got: coeffs.len() });
        }
        self.rows.push((coeffs, rhs));
        Ok(())
    }

    pub fn with_row(mut self, coeffs: BitVector, rhs: bool) -> Result<Self> {
        self.push(coeffs, rhs)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[(BitVector, bool)] {
        &self.rows
    }

    pub fn is_satisfied_by(&self, v: &BitVector) -> Result<bool> {
        for (c, rhs) in &self.rows {
            if c.dot(v)? != *rhs {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn solve(&self) -> AffineSubspace {
        gaussian_eliminate(self)
    }
}

/// Solution set of a linear system: empty, or `particular ⊕ span(null_basis)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineSubspace {
    dim: usize,
    inner: Option<Solved>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Solved {
    particular: BitVector,
    null_basis: Vec<BitVector>,
    /// Reduced pivot rows; membership is checked against these.
    reduced: Vec<(BitVector, bool)>,
}

impl AffineSubspace {
    pub fn full(dim: usize) -> Result<Self> {
        LinearSystem::new(dim).map(|s| gaussian_eliminate(&s))
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, inner: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_none()
    }

    pub fn particular(&self) -> Option<&BitVector> {
        self.inner.as_ref().map(|s| &s.particular)
    }

    pub fn null_basis(&self) -> &[BitVector] {
        self.inner.as_ref().map(|s| s.null_basis.as_slice()).unwrap_or(&[])
    }

    /// Number of free variables, or `None` when empty. `size = 2^null_dim`.
    pub fn null_dim(&self) -> Option<usize> {
        self.inner.as_ref().map(|s| s.null_basis.len())
    }

    /// Number of members. Panics if the space has `2^128` or more members.
    pub fn size(&self) -> u128 {
        match self.null_dim() {
            None => 0,
            Some(k) => {
                assert!(k < 128, "subspace of 2^{k} members does not fit in u128");
                1u128 << k
            }
        }
    }

    pub fn contains(&self, v: &BitVector) -> Result<bool> {
        if v.len() != self.dim {
            return Err(Error::LengthMismatch { expected: self.dim, got: v.len() });
        }
        Ok(match &self.inner {
            None => false,
            Some(s) => s.reduced.iter().all(|(c, rhs)| c.dot_unchecked(v) == *rhs),
        })
    }

    /// Uniform draw: the particular solution plus a random GF(2) combination
    /// of the null-space basis.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BitVector> {
        let s = self.inner.as_ref().ok_or(Error::EmptySubspace)?;
        let mut v = s.particular.clone();
        for b in &s.null_basis {
            if rng.gen::<bool>() {
                v.xor_assign(b);
            }
        }
        Ok(v)
    }

    /// All members in Gray-code order of the basis coefficients.
    pub fn members(&self) -> Members<'_> {
        match &self.inner {
            None => Members { basis: &[], current: None, step: 0, total: 0 },
            Some(s) => {
                assert!(s.null_basis.len() < 64, "too many members to enumerate");
                Members {
                    basis: &s.null_basis,
                    current: Some(s.particular.clone()),
                    step: 0,
                    total: 1u64 << s.null_basis.len(),
                }
            }
        }
    }
}

/// Iterator over the members of an [`AffineSubspace`].
pub struct Members<'a> {
    basis: &'a [BitVector],
    current: Option<BitVector>,
    step: u64,
    total: u64,
}

impl Iterator for Members<'_> {
    type Item = BitVector;

    fn next(&mut self) -> Option<BitVector> {
        if self.step >= self.total {
            return None;
        }
        let out = self.current.clone()?;
        self.step += 1;
        if self.step < self.total {
            let flip = self.step.trailing_zeros() as usize;
            if let Some(c) = self.current.as_mut() {
                c.xor_assign(&self.basis[flip]);
            }
        }
        Some(out)
    }
}

/// Row-reduces the system, pivoting on the lowest-index column first.
///
/// Returns the full solution set; an inconsistent system yields an empty
/// subspace rather than an error.
pub fn gaussian_eliminate(sys: &LinearSystem) -> AffineSubspace {
    let d = sys.dim;
    let mut rows: Vec<(BitVector, bool)> = sys.rows.clone();
    let mut pivots: Vec<usize> = Vec::new();
    let mut rank = 0;
    for col in 0..d {
        let Some(found) = (rank..rows.len()).find(|&r| rows[r].0.get(col)) else {
            continue;
        };
        rows.swap(rank, found);
        let (pivot_row, pivot_rhs) = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row.0.get(col) {
                row.0.xor_assign(&pivot_row);
                row.1 ^= pivot_rhs;
            }
        }
        pivots.push(col);
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    if rows[rank..].iter().any(|(c, rhs)| *rhs && c.is_zero()) {
        return AffineSubspace::empty(d);
    }
    rows.truncate(rank);

    let mut particular = BitVector::zeros(d).expect("dim > 0");
    let mut is_pivot = vec![false; d];
    for (row, &p) in rows.iter().zip(&pivots) {
        particular.set(p, row.1);
        is_pivot[p] = true;
    }
    let null_basis = (0..d)
        .filter(|&f| !is_pivot[f])
        .map(|f| {
            let mut v = BitVector::unit(d, f).expect("dim > 0");
            for (row, &p) in rows.iter().zip(&pivots) {
                if row.0.get(f) {
                    v.set(p, true);
                }
            }
            v
        })
        .collect();
    AffineSubspace { dim: d, inner: Some(Solved { particular, null_basis, reduced: rows }) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bv(s: &str) -> BitVector {
        s.parse().unwrap()
    }

    fn brute_force(sys: &LinearSystem) -> Vec<u64> {
        (0..1u64 << sys.dim())
            .filter(|&i| sys.is_satisfied_by(&BitVector::from_index(i, sys.dim()).unwrap()).unwrap())
            .collect()
    }

    fn random_system(rng: &mut ChaCha8Rng, d: usize, rows: usize) -> LinearSystem {
        let mut sys = LinearSystem::new(d).unwrap();
        for _ in 0..rows {
            sys.push(BitVector::random(d, rng).unwrap(), rng.gen()).unwrap();
        }
        sys
    }

    fn consistent_system(rng: &mut ChaCha8Rng, d: usize, rows: usize) -> LinearSystem {
        let secret = BitVector::random(d, rng).unwrap();
        let mut sys = LinearSystem::new(d).unwrap();
        for _ in 0..rows {
            let x = BitVector::random(d, rng).unwrap();
            let y = x.dot(&secret).unwrap();
            sys.push(x, y).unwrap();
        }
        sys
    }

    #[test]
    fn inner_product_examples() {
        assert!(!inner_product(&bv("0000"), &bv("1011")).unwrap());
        assert!(inner_product(&bv("1011"), &bv("1011")).unwrap());
        assert!(inner_product(&bv("1100"), &bv("1010")).unwrap());
        assert_eq!(
            inner_product(&bv("110"), &bv("1010")),
            Err(Error::LengthMismatch { expected: 3, got: 4 })
        );
    }

    #[test]
    fn packing_across_word_boundary() {
        let mut v = BitVector::zeros(130).unwrap();
        v.set(0, true);
        v.set(64, true);
        v.set(129, true);
        assert_eq!(v.count_ones(), 3);
        let w: BitVector = v.to_string().parse().unwrap();
        assert_eq!(v, w);
        assert!(v.dot(&v).unwrap());
        assert_eq!(BitVector::zeros(0), Err(Error::EmptyVector));
    }

    #[test]
    fn eliminate_examples() {
        let free = LinearSystem::new(2).unwrap().solve();
        assert_eq!(free.size(), 4);

        let sys = LinearSystem::new(2).unwrap().with_row(bv("11"), true).unwrap();
        let v = sys.solve();
        assert_eq!(v.size(), 2);
        let mut members: Vec<String> = v.members().map(|m| m.to_string()).collect();
        members.sort();
        assert_eq!(members, vec!["01", "10"]);

        let contradiction = LinearSystem::new(2)
            .unwrap()
            .with_row(bv("10"), false)
            .unwrap()
            .with_row(bv("10"), true)
            .unwrap();
        assert!(contradiction.solve().is_empty());
        assert_eq!(contradiction.solve().size(), 0);
    }

    #[test]
    fn size_examples() {
        let one_row = LinearSystem::new(3).unwrap().with_row(bv("101"), true).unwrap();
        assert_eq!(one_row.solve().size(), 4);

        let sys = LinearSystem::new(2).unwrap().with_row(bv("11"), true).unwrap();
        assert_eq!(sys.solve().size(), 2);
        let tighter = sys.with_row(bv("10"), true).unwrap().solve();
        assert_eq!(tighter.size(), 1);
        assert!(tighter.contains(&bv("10")).unwrap());
    }

    #[test]
    fn contains_examples() {
        let sys = LinearSystem::new(2).unwrap().with_row(bv("11"), true).unwrap();
        let v = sys.solve();
        assert!(v.contains(&bv("10")).unwrap());
        assert!(!v.contains(&bv("11")).unwrap());
        assert!(!AffineSubspace::empty(2).contains(&bv("10")).unwrap());
        assert!(v.contains(&bv("101")).is_err());
    }

    #[test]
    fn sampling_empty_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(AffineSubspace::empty(3).sample_uniform(&mut rng), Err(Error::EmptySubspace));
    }

    #[test]
    fn singleton_sample_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = LinearSystem::new(2)
            .unwrap()
            .with_row(bv("11"), true)
            .unwrap()
            .with_row(bv("10"), true)
            .unwrap();
        let v = sys.solve();
        for _ in 0..100 {
            assert_eq!(v.sample_uniform(&mut rng).unwrap(), bv("10"));
        }
    }

    fn frequencies(v: &AffineSubspace, draws: usize, seed: u64) -> Vec<(u64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = std::collections::BTreeMap::new();
        for m in v.members() {
            counts.insert(m.to_index(), 0usize);
        }
        for _ in 0..draws {
            let s = v.sample_uniform(&mut rng).unwrap();
            *counts.get_mut(&s.to_index()).expect("sample is a member") += 1;
        }
        counts.into_iter().collect()
    }

    #[test]
    fn sample_frequency_two_members() {
        let v = LinearSystem::new(2).unwrap().with_row(bv("11"), true).unwrap().solve();
        for (_, c) in frequencies(&v, 10_000, 3) {
            assert!((c as f64 / 1e4 - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn sample_frequency_full_cube() {
        let v = AffineSubspace::full(3).unwrap();
        let f = frequencies(&v, 100_000, 4);
        assert_eq!(f.len(), 8);
        for (_, c) in f {
            assert!((c as f64 / 1e5 - 0.125).abs() <= 0.01);
        }
    }

    /// Chi-square upper critical values at p = 0.01 for df = 1..63 would be a
    /// table; Wilson–Hilferty is accurate to well under 1% for df >= 1.
    fn chi2_crit_001(df: f64) -> f64 {
        let z = 2.326_347_874;
        let a = 2.0 / (9.0 * df);
        df * (1.0 - a + z * a.sqrt()).powi(3)
    }

    #[test]
    fn sample_uniform_passes_chi_square_on_small_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for case in 0..40u64 {
            let d = 2 + (case % 5) as usize;
            let sys = consistent_system(&mut rng, d, (case % 4) as usize);
            let v = sys.solve();
            let size = v.size() as usize;
            if !(2..=64).contains(&size) {
                continue;
            }
            let draws = 100_000;
            let expected = draws as f64 / size as f64;
            let stat: f64 = frequencies(&v, draws, 100 + case)
                .iter()
                .map(|&(_, c)| (c as f64 - expected).powi(2) / expected)
                .sum();
            assert!(stat < chi2_crit_001((size - 1) as f64), "case {case}: chi2 {stat}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for case in 0..100 {
            let d = 1 + case % 12;
            let rows = rng.gen_range(0..=d + 2);
            let sys = if case % 3 == 0 { random_system(&mut rng, d, rows) } else { consistent_system(&mut rng, d, rows) };
            let v = sys.solve();
            let brute = brute_force(&sys);
            assert_eq!(v.size() as usize, brute.len(), "case {case}");
            let mut mine: Vec<u64> = v.members().map(|m| m.to_index()).collect();
            mine.sort_unstable();
            assert_eq!(mine, brute, "case {case}");
            for i in 0..1u64 << d {
                let x = BitVector::from_index(i, d).unwrap();
                assert_eq!(v.contains(&x).unwrap(), brute.binary_search(&i).is_ok());
            }
        }
    }

    #[test]
    fn null_basis_is_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let sys = consistent_system(&mut rng, 10, 4);
            let v = sys.solve();
            let mut basis_sys = LinearSystem::new(10).unwrap();
            for b in v.null_basis() {
                basis_sys.push(b.clone(), false).unwrap();
            }
            // Rows are independent iff elimination leaves no free pivots among them.
            let rank = 10 - basis_sys.solve().null_dim().unwrap();
            assert_eq!(rank, v.null_basis().len());
        }
    }

    proptest! {
        #[test]
        fn samples_satisfy_system(seed in any::<u64>(), d in 1usize..80, rows in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sys = consistent_system(&mut rng, d, rows);
            let v = sys.solve();
            prop_assert!(!v.is_empty());
            for _ in 0..8 {
                let s = v.sample_uniform(&mut rng).unwrap();
                prop_assert!(v.contains(&s).unwrap());
                prop_assert!(sys.is_satisfied_by(&s).unwrap());
            }
        }

        #[test]
        fn one_more_row_halves_keeps_or_empties(seed in any::<u64>(), d in 1usize..12, rows in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sys = if seed % 2 == 0 { consistent_system(&mut rng, d, rows) } else { random_system(&mut rng, d, rows) };
            let before = sys.solve();
            prop_assume!(!before.is_empty());
            let extended = sys.clone()
                .with_row(BitVector::random(d, &mut rng).unwrap(), rng.gen())
                .unwrap()
                .solve();
            let (a, b) = (before.size(), extended.size());
            prop_assert!(b == a || 2 * b == a || b == 0, "{} -> {}", a, b);
        }
    }
}
