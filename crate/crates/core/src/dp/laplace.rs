use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{open01, Real};

/// The Laplace distribution `Lap(λ)` centred at zero, density `e^{-|x|/λ} / 2λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Laplace<T = f64> {
    scale: T,
}

impl<T: Real> Laplace<T> {
    pub fn new(scale: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::param("scale", format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn std_dev(&self) -> T {
        T::lit(2.0).sqrt() * self.scale
    }

    pub fn pdf(&self, x: T) -> T {
        (-x.abs() / self.scale).exp() / (T::lit(2.0) * self.scale)
    }

    pub fn cdf(&self, x: T) -> T {
        let half = T::lit(0.5);
        if x < T::zero() {
            half * (x / self.scale).exp()
        } else {
            T::one() - half * (-x / self.scale).exp()
        }
    }

    /// `Pr[lo < X <= hi]`.
    pub fn interval_prob(&self, lo: T, hi: T) -> T {
        (self.cdf(hi) - self.cdf(lo)).max(T::zero())
    }

    /// Inverse-CDF draw from a single open-interval uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: T = open01::<T, _>(rng) - T::lit(0.5);
        let two = T::lit(2.0);
        -self.scale * u.signum() * (T::one() - two * u.abs()).ln()
    }
}

pub fn laplace_sample<T: Real, R: Rng + ?Sized>(scale: T, rng: &mut R) -> Result<T> {
    Ok(Laplace::new(scale)?.sample(rng))
}

/// Releases `value + Lap(GS/ε)`. A zero sensitivity returns `value` unchanged.
pub fn laplace_mechanism<T: Real, R: Rng + ?Sized>(
    value: T,
    global_sensitivity: T,
    epsilon: T,
    rng: &mut R,
) -> Result<T> {
    if !(epsilon > T::zero()) {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    if global_sensitivity < T::zero() || !global_sensitivity.is_finite() {
        return Err(Error::param("global_sensitivity", format!("must be >= 0, got {global_sensitivity}")));
    }
    if global_sensitivity == T::zero() {
        return Ok(value);
    }
    Ok(value + Laplace::new(global_sensitivity / epsilon)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(scale: f64, n: usize, seed: u64) -> (f64, f64, f64) {
        let lap = Laplace::new(scale).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| lap.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let nonneg = xs.iter().filter(|&&x| x >= 0.0).count() as f64 / n as f64;
        (mean, var.sqrt(), nonneg)
    }

    #[test]
    fn unit_scale_moments() {
        let (mean, sd, _) = moments(1.0, 1_000_000, 11);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((sd / 2f64.sqrt() - 1.0).abs() <= 0.02, "sd {sd}");
    }

    #[test]
    fn symmetric_at_scale_two() {
        let (_, _, nonneg) = moments(2.0, 200_000, 12);
        assert!((nonneg - 0.5).abs() <= 0.01);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(Laplace::new(0.0).is_err());
        assert!(Laplace::new(-1.0).is_err());
        assert!(Laplace::new(f64::NAN).is_err());
    }

    #[test]
    fn cdf_matches_density() {
        let lap = Laplace::new(1.5).unwrap();
        // Midpoint-rule integral of the density against the closed-form CDF.
        let h = 1e-3;
        let mut acc = lap.cdf(-10.0);
        let mut x = -10.0;
        while x < 3.0 - 1e-9 {
            acc += lap.pdf(x + h / 2.0) * h;
            x += h;
        }
        assert!((acc - lap.cdf(3.0f64)).abs() < 1e-6);
    }

    #[test]
    fn mechanism_zero_sensitivity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(laplace_mechanism(0.37, 0.0, 0.5, &mut rng).unwrap(), 0.37);
        assert!(laplace_mechanism(0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, -1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mechanism_noise_scale_is_sensitivity_over_epsilon() {
        // Fraction queries over s entries have sensitivity 1/s.
        let (s, eps) = (200.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400_000;
        let mean_abs = (0..n)
            .map(|_| laplace_mechanism(0.0f64, 1.0 / s, eps, &mut rng).unwrap().abs())
            .sum::<f64>()
            / n as f64;
        // E|Lap(λ)| = λ.
        let lambda = 1.0 / (s * eps);
        assert!((mean_abs / lambda - 1.0).abs() < 0.01);
    }

    #[test]
    fn works_in_f32() {
        let lap = Laplace::<f32>::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: f32 = lap.sample(&mut rng);
        assert!(x.is_finite());
    }
}
