//! Heteroscedastic, right-skewed synthetic regression data with a known
//! conditional law.
//!
//! `X ~ U(0, x_max)`, `Y = S · σ(X) · W`, where `σ(x) = a + b x`,
//! `W ~ (1 - w) N(0, 1) + w N(c, 1)` and `S = -1` with probability `p`
//! (independently per sample), else `+1`. With the defaults `w = 0.06`,
//! `c = 10` the conditional skewness is about 2.9 at `p = 0` and exactly 0 at
//! `p = 1/2`. Extra pure-noise features can be appended.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, Features};
use crate::density::ConditionalDistribution;
use crate::error::{ChrError, Result};

const BISECTION_STEPS: usize = 200;
/// Standard-normal tail beyond which the CDF is 0 or 1 in double precision.
const NORMAL_REACH: f64 = 40.0;

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Parameters of the conditional law of `Y` given `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewedLaw {
    /// Weight `w` of the shifted mixture component.
    pub outlier_weight: f64,
    /// Location `c` of the shifted component.
    pub outlier_shift: f64,
    pub scale_intercept: f64,
    pub scale_slope: f64,
    /// Features are drawn from `U(0, x_max)`.
    pub x_max: f64,
    /// Probability `p` of negating a response.
    pub flip_prob: f64,
}

impl Default for SkewedLaw {
    fn default() -> Self {
        Self {
            outlier_weight: 0.06,
            outlier_shift: 10.0,
            scale_intercept: 0.5,
            scale_slope: 0.4,
            x_max: 5.0,
            flip_prob: 0.0,
        }
    }
}

impl SkewedLaw {
    pub fn with_flip_prob(flip_prob: f64) -> Self {
        Self {
            flip_prob,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.outlier_weight)
            && self.outlier_shift.is_finite()
            && self.scale_intercept > 0.0
            && self.scale_slope >= 0.0
            && self.x_max > 0.0
            && (0.0..=1.0).contains(&self.flip_prob);
        if ok {
            Ok(())
        } else {
            Err(ChrError::Config(format!("invalid synthetic law {self:?}")))
        }
    }

    /// `σ(x)`; the first feature drives the scale.
    pub fn scale(&self, x: f64) -> f64 {
        self.scale_intercept + self.scale_slope * x
    }

    fn mixture_cdf(&self, z: f64) -> f64 {
        let w = self.outlier_weight;
        (1.0 - w) * normal_cdf(z) + w * normal_cdf(z - self.outlier_shift)
    }

    /// CDF of `S · W`, the response at unit scale.
    pub fn standard_cdf(&self, z: f64) -> f64 {
        let p = self.flip_prob;
        let value = if p == 0.0 {
            self.mixture_cdf(z)
        } else if p == 1.0 {
            1.0 - self.mixture_cdf(-z)
        } else {
            (1.0 - p) * self.mixture_cdf(z) + p * (1.0 - self.mixture_cdf(-z))
        };
        value.clamp(0.0, 1.0)
    }

    /// Quantile of `S · W` by bisection; `u` is clamped into `(0, 1)`.
    pub fn standard_quantile(&self, u: f64) -> f64 {
        let reach = self.outlier_shift.abs() + NORMAL_REACH;
        let (mut lo, mut hi) = (-reach, reach);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.standard_cdf(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    pub fn cdf(&self, x: f64, y: f64) -> f64 {
        self.standard_cdf(y / self.scale(x))
    }

    pub fn quantile(&self, x: f64, u: f64) -> f64 {
        self.scale(x) * self.standard_quantile(u)
    }

    /// Raw moments `E[(S W)^k]`, `k = 1, 2, 3`.
    fn standard_moments(&self) -> [f64; 3] {
        let (w, c) = (self.outlier_weight, self.outlier_shift);
        let sign = 1.0 - 2.0 * self.flip_prob;
        [sign * w * c, 1.0 + w * c * c, sign * w * (c * c * c + 3.0 * c)]
    }

    pub fn conditional_mean(&self, x: f64) -> f64 {
        self.scale(x) * self.standard_moments()[0]
    }

    /// `E[(Y - μ(X))³ / σ³(X)]`, the same for every `x`.
    pub fn skewness(&self) -> f64 {
        let [m1, m2, m3] = self.standard_moments();
        let var = m2 - m1 * m1;
        (m3 - 3.0 * m1 * var - m1 * m1 * m1) / var.powf(1.5)
    }

    /// Flip probability in `[0, 1/2]` whose law has the given skewness,
    /// clamped to the attainable range.
    pub fn flip_prob_for_skewness(target: f64) -> f64 {
        let skew = |p: f64| Self::with_flip_prob(p).skewness();
        if target >= skew(0.0) {
            return 0.0;
        }
        if target <= 0.0 {
            return 0.5;
        }
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if skew(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Shortest interval of `S · W` with probability `1 - alpha`, as the
    /// lower tail level `a` and the endpoints `(Q(a), Q(a + 1 - alpha))`.
    pub fn standard_oracle_interval(&self, alpha: f64) -> (f64, f64) {
        let width = |a: f64| self.standard_quantile(a + 1.0 - alpha) - self.standard_quantile(a);
        let coarse = 400;
        let step = alpha / coarse as f64;
        let best = (0..=coarse)
            .map(|i| i as f64 * step)
            .min_by(|&a, &b| width(a).total_cmp(&width(b)))
            .expect("non-empty scan");
        // golden-section refinement around the best coarse point
        let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(alpha));
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let a = hi - ratio * (hi - lo);
            let b = lo + ratio * (hi - lo);
            if width(a) <= width(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let a = 0.5 * (lo + hi);
        (self.standard_quantile(a), self.standard_quantile(a + 1.0 - alpha))
    }

    /// Oracle interval at `x`.
    pub fn oracle_interval(&self, x: f64, alpha: f64) -> (f64, f64) {
        let (lo, hi) = self.standard_oracle_interval(alpha);
        (self.scale(x) * lo, self.scale(x) * hi)
    }

    /// Mean oracle width under `X ~ U(0, x_max)`.
    pub fn mean_oracle_width(&self, alpha: f64) -> f64 {
        let (lo, hi) = self.standard_oracle_interval(alpha);
        (hi - lo) * self.scale(0.5 * self.x_max)
    }

    /// Draws `(x, y)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let x = Uniform::new(0.0, self.x_max).expect("positive range").sample(rng);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut w: f64 = normal.sample(rng);
        if rng.random::<f64>() < self.outlier_weight {
            w += self.outlier_shift;
        }
        let sign = if rng.random::<f64>() < self.flip_prob { -1.0 } else { 1.0 };
        (x, sign * self.scale(x) * w)
    }
}

/// The conditional law at one feature value, with inverse CDF clamped to
/// `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalLaw {
    pub law: SkewedLaw,
    pub x: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConditionalDistribution for ConditionalLaw {
    fn cdf(&self, y: f64) -> f64 {
        self.law.cdf(self.x, y)
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lower;
        }
        if u >= 1.0 {
            return self.upper;
        }
        self.law.quantile(self.x, u).clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub law: SkewedLaw,
    /// Extra `N(0, 1)` features unrelated to the response.
    pub noise_features: usize,
    pub seed: u64,
}

/// Draws a dataset; the first feature is `X`, followed by noise features.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.law.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let cols = 1 + cfg.noise_features;
    let mut values = Vec::with_capacity(cfg.n_samples * cols);
    let mut responses = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let (x, y) = cfg.law.sample(&mut rng);
        values.push(x);
        values.extend((0..cfg.noise_features).map(|_| normal.sample(&mut rng)));
        responses.push(y);
    }
    Dataset::new(Features::new(values, cols)?, responses)
}

#[cfg(test)]
mod tests {
    use super::*;

    // independently computed with a bisection/bounded-minimizer reference
    const ORACLE_WIDTH_90: f64 = 4.056138289867814;
    const CENTRAL_WIDTH_90_SKEWED: f64 = 10.647244736313116;
    const SKEWNESS_MAX: f64 = 2.9007456996880054;

    #[test]
    fn reference_values() {
        let skewed = SkewedLaw::default();
        assert!((skewed.skewness() - SKEWNESS_MAX).abs() < 1e-12);
        assert!(SkewedLaw::with_flip_prob(0.5).skewness().abs() < 1e-12);
        assert!((skewed.standard_quantile(0.05) - -1.6146663024148127).abs() < 1e-9);
        assert!((skewed.standard_quantile(0.95) - 9.032578433898303).abs() < 1e-9);
        let central = skewed.standard_quantile(0.95) - skewed.standard_quantile(0.05);
        assert!((central - CENTRAL_WIDTH_90_SKEWED).abs() < 1e-9);
        for p in [0.0, 0.25, 0.5] {
            let (lo, hi) = SkewedLaw::with_flip_prob(p).standard_oracle_interval(0.1);
            assert!((hi - lo - ORACLE_WIDTH_90).abs() < 1e-8, "p = {p}: {}", hi - lo);
        }
    }

    #[test]
    fn oracle_interval_matches_grid_search() {
        for p in [0.0, 0.2, 0.5] {
            let law = SkewedLaw::with_flip_prob(p);
            let (lo, hi) = law.standard_oracle_interval(0.1);
            let n = 10_000;
            let (a, b) = (-20.0, 25.0);
            let h = (b - a) / n as f64;
            let grid: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
            let cdf: Vec<f64> = grid.iter().map(|&y| law.standard_cdf(y)).collect();
            let mut best = (f64::INFINITY, 0, 0);
            let mut r = 0;
            for l in 0..=n {
                r = r.max(l);
                while r < n && cdf[r] - cdf[l] < 0.9 {
                    r += 1;
                }
                if cdf[r] - cdf[l] >= 0.9 && grid[r] - grid[l] < best.0 {
                    best = (grid[r] - grid[l], l, r);
                }
            }
            assert!((best.0 - (hi - lo)).abs() <= 2.0 * h, "p = {p}");
            assert!((grid[best.1] - lo).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn quantiles_invert_the_cdf() {
        let law = SkewedLaw::with_flip_prob(0.3);
        for u in [0.001, 0.05, 0.5, 0.93, 0.999] {
            let y = law.quantile(2.0, u);
            assert!((law.cdf(2.0, y) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn flipping_reflects_quantiles() {
        let up = SkewedLaw::with_flip_prob(0.0);
        let down = SkewedLaw::with_flip_prob(1.0);
        for u in [0.1, 0.3, 0.8] {
            assert!((up.quantile(1.0, u) + down.quantile(1.0, 1.0 - u)).abs() < 1e-9);
        }
        let symmetric = SkewedLaw::with_flip_prob(0.5);
        assert!(symmetric.quantile(3.0, 0.5).abs() < 1e-9);
        assert!(symmetric.conditional_mean(3.0).abs() < 1e-12);
    }

    #[test]
    fn skewness_inversion() {
        for target in [0.5, 1.5, 2.5] {
            let p = SkewedLaw::flip_prob_for_skewness(target);
            assert!((SkewedLaw::with_flip_prob(p).skewness() - target).abs() < 1e-9);
        }
        assert_eq!(SkewedLaw::flip_prob_for_skewness(3.0), 0.0);
        assert_eq!(SkewedLaw::flip_prob_for_skewness(0.0), 0.5);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SyntheticConfig {
            n_samples: 50,
            law: SkewedLaw::default(),
            noise_features: 1,
            seed: 9,
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        assert_eq!(a.features.cols(), 2);
        assert!(a.features.iter().all(|r| (0.0..5.0).contains(&r[0])));
    }

    #[test]
    fn empirical_skewness_near_closed_form() {
        let law = SkewedLaw::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let z: Vec<f64> = (0..n)
            .map(|_| {
                let (x, y) = law.sample(&mut rng);
                (y - law.conditional_mean(x)) / law.scale(x)
            })
            .collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
        let skew = m3 / m2.powf(1.5);
        assert!((2.5..=3.5).contains(&skew), "{skew}");
    }
}
