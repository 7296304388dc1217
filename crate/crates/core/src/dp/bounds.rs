//! Closed-form tail bounds used as oracles for Monte-Carlo checks.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Multiplicative Chernoff bounds for the mean of `n` Bernoulli(μ) draws:
/// `(Pr[mean >= (1+φ)μ] bound, Pr[mean <= (1-φ)μ] bound)`.
pub fn chernoff_mult<T: Real>(n: u64, mu: T, phi: T) -> Result<(T, T)> {
    if !(mu > T::zero() && mu < T::one()) {
        return Err(Error::param("mu", format!("must lie in (0,1), got {mu}")));
    }
    if !(phi > T::zero() && phi <= T::one()) {
        return Err(Error::param("phi", format!("must lie in (0,1], got {phi}")));
    }
    let base = phi * phi * mu * T::lit(n as f64);
    Ok(((-base / T::lit(3.0)).exp(), (-base / T::lit(2.0)).exp()))
}

/// Additive Hoeffding bound `2 exp(-2δ²n/(b-a)²)` for variables in `[a, b]`,
/// clamped to 1.
pub fn hoeffding<T: Real>(n: u64, delta: T, a: T, b: T) -> Result<T> {
    if !(b > a) {
        return Err(Error::param("range", format!("need b > a, got a={a}, b={b}")));
    }
    if !(delta > T::zero()) {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    let width = b - a;
    let v = T::lit(2.0) * (-T::lit(2.0) * delta * delta * T::lit(n as f64) / (width * width)).exp();
    Ok(v.min(T::one()))
}

/// Tail bound `exp(-δ²n/(4λ²))` on `|mean of n Lap(λ)| >= δ`, clamped to 1.
///
/// The moment-generating-function derivation assumes `δ < 1` and `λ > 1`.
/// Outside that regime the formula is still returned;
/// [`laplace_sum_in_proven_regime`] reports which case applies.
pub fn laplace_sum<T: Real>(n: u64, delta: T, lambda: T) -> Result<T> {
    if delta < T::zero() {
        return Err(Error::param("delta", format!("must be >= 0, got {delta}")));
    }
    if !(lambda > T::zero()) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    let v = (-delta * delta * T::lit(n as f64) / (T::lit(4.0) * lambda * lambda)).exp();
    Ok(v.min(T::one()))
}

pub fn laplace_sum_in_proven_regime<T: Real>(delta: T, lambda: T) -> bool {
    delta < T::one() && lambda > T::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::dp::Laplace;

    #[test]
    fn chernoff_examples() {
        let (up, lo) = chernoff_mult(0, 0.5, 0.2).unwrap();
        assert_eq!((up, lo), (1.0, 1.0));
        let (up, lo) = chernoff_mult(300, 0.5, 0.2).unwrap();
        assert!((up - (-2.0f64).exp()).abs() < 1e-15);
        assert!((up - 0.1353).abs() < 1e-4);
        assert!(lo <= up);
        assert!((lo - (-3.0f64).exp()).abs() < 1e-15);
        assert!(chernoff_mult(10, 1.0, 0.5).is_err());
        assert!(chernoff_mult(10, 0.5, 1.5).is_err());
        assert!(chernoff_mult(10, 0.5, 0.0).is_err());
    }

    #[test]
    fn hoeffding_examples() {
        assert_eq!(hoeffding(0, 0.1, 0.0, 1.0).unwrap(), 1.0);
        assert!(hoeffding(u64::MAX, 0.1, 0.0, 1.0).unwrap() < 1e-300);
        let v = hoeffding(800, 0.1, -1.0, 1.0).unwrap();
        assert!((v - 2.0 * (-4.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.0366).abs() < 1e-4);
        assert!(hoeffding(10, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn laplace_sum_examples() {
        assert_eq!(laplace_sum(100, 0.0, 1.0).unwrap(), 1.0);
        assert!((laplace_sum(400, 0.5, 1.0).unwrap() - (-25.0f64).exp()).abs() < 1e-20);
        assert!(laplace_sum(1, 0.5, 0.0).is_err());
        assert!(laplace_sum(1, -0.5, 1.0).is_err());
        assert!(laplace_sum_in_proven_regime(0.5, 2.0));
        assert!(!laplace_sum_in_proven_regime(0.5, 1.0));
    }

    #[test]
    fn bounds_are_monotone() {
        let mut prev = (2.0, 2.0, 2.0, 2.0);
        for n in (0..2000).step_by(50) {
            let (c, _) = chernoff_mult(n, 0.3, 0.5).unwrap();
            let h = hoeffding(n, 0.1, 0.0, 1.0).unwrap();
            let l = laplace_sum(n, 0.2, 1.0).unwrap();
            let (_, cl) = chernoff_mult(n, 0.3, 0.5).unwrap();
            assert!(c <= prev.0 && h <= prev.1 && l <= prev.2 && cl <= prev.3);
            prev = (c, h, l, cl);
        }
        let mut prev = (2.0, 2.0, 2.0);
        for k in 1..=20 {
            let x = k as f64 / 20.0;
            let (c, _) = chernoff_mult(200, 0.3, x).unwrap();
            let h = hoeffding(200, x, 0.0, 1.0).unwrap();
            let l = laplace_sum(200, x, 1.0).unwrap();
            assert!(c <= prev.0 && h <= prev.1 && l <= prev.2);
            prev = (c, h, l);
        }
    }

    #[test]
    fn laplace_tail_frequency_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(n, delta, lambda) in &[(100u64, 0.3, 1.0), (400, 0.2, 1.0)] {
            let lap = Laplace::new(lambda).unwrap();
            let reps = 20_000;
            let hits = (0..reps)
                .filter(|_| {
                    let m = (0..n).map(|_| lap.sample(&mut rng)).sum::<f64>() / n as f64;
                    m.abs() >= delta
                })
                .count();
            let freq = hits as f64 / reps as f64;
            assert!(freq <= laplace_sum(n, delta, lambda).unwrap(), "({n},{delta},{lambda}) freq {freq}");
        }
    }

    #[test]
    fn chernoff_tail_frequency_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (n, mu, phi) = (200u64, 0.3, 0.3);
        let (up, lo) = chernoff_mult(n, mu, phi).unwrap();
        let reps = 20_000;
        let (mut hi_hits, mut lo_hits) = (0, 0);
        for _ in 0..reps {
            let s = (0..n).filter(|_| rng.gen_bool(mu)).count() as f64 / n as f64;
            hi_hits += (s >= (1.0 + phi) * mu) as usize;
            lo_hits += (s <= (1.0 - phi) * mu) as usize;
        }
        assert!((hi_hits as f64 / reps as f64) <= up);
        assert!((lo_hits as f64 / reps as f64) <= lo);
    }
}
