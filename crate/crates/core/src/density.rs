//! Piecewise-constant conditional densities built from a grid of estimated
//! quantiles, and their integration onto a bin partition.
//!
//! A quantile grid `q_0 <= ... <= q_K` at levels `0 = a_0 < ... < a_K = 1`
//! spreads the level increment `a_k - a_{k-1}` uniformly over `(q_{k-1}, q_k]`.
//! Repeated values encode point masses: every increment that lands on an
//! already reached value is absorbed by the segment ending there.

use serde::{Deserialize, Serialize};

use crate::error::{ChrError, Result};
use crate::interval::{ConditionalHistogram, Partition, RENORMALIZE_TOL, UNIT_SUM_TOL};

/// Levels closer than this are treated as the same grid level.
const LEVEL_TOL: f64 = 1e-12;

/// Anything with a CDF and a left-continuous generalized inverse.
pub trait ConditionalDistribution {
    fn cdf(&self, y: f64) -> f64;
    /// `inf { y : cdf(y) >= u }`, clamped to the support.
    fn inverse_cdf(&self, u: f64) -> f64;
}

/// Estimated conditional quantiles at fixed levels, bracketed by the support
/// bounds at levels 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || levels.len() != values.len() {
            return Err(ChrError::InvalidGrid(format!(
                "{} levels for {} values",
                levels.len(),
                values.len()
            )));
        }
        if levels[0] != 0.0 || levels[levels.len() - 1] != 1.0 {
            return Err(ChrError::InvalidGrid("levels must run from 0 to 1".into()));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ChrError::InvalidGrid("levels must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ChrError::InvalidGrid("quantile values must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(ChrError::InvalidGrid("quantile values must be non-decreasing".into()));
        }
        Ok(Self { levels, values })
    }

    /// Builds a grid from possibly crossing interior estimates: sorts them and
    /// clamps them into `[lower, upper]`, which become the level-0 and level-1
    /// values.
    pub fn from_estimates(levels: Vec<f64>, mut interior: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if interior.len() + 2 != levels.len() {
            return Err(ChrError::InvalidGrid(format!(
                "{} interior estimates for {} levels",
                interior.len(),
                levels.len()
            )));
        }
        interior.sort_by(f64::total_cmp);
        let mut values = Vec::with_capacity(levels.len());
        values.push(lower);
        values.extend(interior.into_iter().map(|v| v.clamp(lower, upper)));
        values.push(upper);
        Self::new(levels, values)
    }

    /// `0, 1/steps, ..., 1`.
    pub fn uniform_levels(steps: usize) -> Vec<f64> {
        (0..=steps).map(|k| k as f64 / steps as f64).collect()
    }

    /// The default grid: bounds plus the 1%, 2%, ..., 99% quantiles.
    pub fn default_levels() -> Vec<f64> {
        Self::uniform_levels(100)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of level steps `K`.
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn lower(&self) -> f64 {
        self.values[0]
    }

    pub fn upper(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Quantile at `level`, interpolating linearly between grid levels.
    pub fn value_at(&self, level: f64) -> f64 {
        let level = level.clamp(0.0, 1.0);
        let j = self.levels.partition_point(|&a| a < level - LEVEL_TOL);
        if j >= self.levels.len() {
            return self.upper();
        }
        if (self.levels[j] - level).abs() <= LEVEL_TOL || j == 0 {
            return self.values[j];
        }
        let (a0, a1) = (self.levels[j - 1], self.levels[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (level - a0) / (a1 - a0)
    }
}

/// A density that is constant on each segment `(c_{j-1}, c_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDensity {
    knots: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn new(knots: Vec<f64>, mut masses: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || masses.len() + 1 != knots.len() {
            return Err(ChrError::InvalidHistogram(format!(
                "{} knots for {} segment masses",
                knots.len(),
                masses.len()
            )));
        }
        if knots.iter().any(|c| !c.is_finite()) || knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ChrError::InvalidHistogram("knots must be finite and strictly increasing".into()));
        }
        if masses.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ChrError::InvalidHistogram("segment masses must be non-negative".into()));
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(ChrError::NonUnitSum { sum });
        }
        if (sum - 1.0).abs() > UNIT_SUM_TOL {
            masses.iter_mut().for_each(|p| *p /= sum);
        }
        let mut cumulative = Vec::with_capacity(knots.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for &p in &masses {
            acc += p;
            cumulative.push(acc.min(1.0));
        }
        *cumulative.last_mut().expect("at least one segment") = 1.0;
        Ok(Self {
            knots,
            masses,
            cumulative,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn segments(&self) -> usize {
        self.masses.len()
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Density value on the segment containing `y` (0 outside the support).
    pub fn density(&self, y: f64) -> f64 {
        if y <= self.lower() || y > self.upper() {
            return 0.0;
        }
        let s = self.knots.partition_point(|&c| c < y) - 1;
        self.masses[s] / (self.knots[s + 1] - self.knots[s])
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        if y <= self.lower() {
            return 0.0;
        }
        if y >= self.upper() {
            return 1.0;
        }
        let s = self.knots.partition_point(|&c| c <= y) - 1;
        let (c0, c1) = (self.knots[s], self.knots[s + 1]);
        let value = self.cumulative[s] + self.masses[s] * ((y - c0) / (c1 - c0));
        value.min(self.cumulative[s + 1])
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lower();
        }
        let u = u.min(1.0);
        // first segment whose right end reaches u; it has positive mass
        let s = self.cumulative[1..].partition_point(|&c| c < u);
        let (c0, c1) = (self.knots[s], self.knots[s + 1]);
        let frac = (u - self.cumulative[s]) / self.masses[s];
        let guess = (c0 + frac * (c1 - c0)).clamp(c0, c1);
        if self.cdf(c0) >= u {
            return c0;
        }
        // least y in (c0, c1] with cdf(y) >= u, by bisection over the
        // ordered doubles, so that the pair is an exact Galois connection
        let (mut below, mut above) = (ordered_key(c0), ordered_key(c1));
        if self.cdf(guess) >= u {
            above = above.min(ordered_key(guess));
        } else {
            below = below.max(ordered_key(guess));
        }
        while i128::from(above) - i128::from(below) > 1 {
            let mid = ((i128::from(below) + i128::from(above)) / 2) as i64;
            if self.cdf(from_ordered_key(mid)) >= u {
                above = mid;
            } else {
                below = mid;
            }
        }
        from_ordered_key(above)
    }
}

/// Monotone map from doubles to integers: `a < b` iff `key(a) < key(b)`,
/// apart from the two zeros.
fn ordered_key(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

fn from_ordered_key(key: i64) -> f64 {
    f64::from_bits((key ^ (((key >> 63) as u64) >> 1) as i64) as u64)
}

impl ConditionalDistribution for PiecewiseDensity {
    fn cdf(&self, y: f64) -> f64 {
        PiecewiseDensity::cdf(self, y)
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        PiecewiseDensity::inverse_cdf(self, u)
    }
}

/// Width given to the single segment of a grid whose quantiles all coincide.
fn point_width(c: f64) -> f64 {
    (c.abs() * 16.0 * f64::EPSILON).max(1e-9)
}

/// Density whose segments sit between consecutive distinct quantile values.
/// Each segment carries the level increments of the grid steps ending at its
/// right knot; increments that stay at `q_0` go to the first segment. A grid
/// with a single distinct value yields one near-point segment.
pub fn quantiles_to_density(grid: &QuantileGrid) -> PiecewiseDensity {
    let (levels, values) = (grid.levels(), grid.values());
    let mut knots = vec![values[0]];
    let mut masses: Vec<f64> = Vec::new();
    let mut at_lower = 0.0;
    for k in 1..levels.len() {
        let step = levels[k] - levels[k - 1];
        if values[k] > *knots.last().expect("non-empty") {
            knots.push(values[k]);
            masses.push(step + at_lower);
            at_lower = 0.0;
        } else if let Some(last) = masses.last_mut() {
            *last += step;
        } else {
            at_lower += step;
        }
    }
    if knots.len() < 2 {
        let c = values[0];
        return PiecewiseDensity::new(vec![c, c + point_width(c)], vec![1.0])
            .expect("single segment is valid");
    }
    PiecewiseDensity::new(knots, masses).expect("level increments sum to one")
}

/// Spreads the mass below `lower_q` uniformly over `[c_0, lower_q]` and the
/// mass above `upper_q` uniformly over `[upper_q, c_end]`. Segments between
/// the two cut points are unchanged.
pub fn tail_smooth(density: &PiecewiseDensity, lower_q: f64, upper_q: f64) -> PiecewiseDensity {
    let (c0, c_end) = (density.lower(), density.upper());
    let lower_q = lower_q.clamp(c0, c_end);
    let upper_q = upper_q.clamp(lower_q, c_end);
    let mut cuts = vec![c0];
    cuts.push(lower_q);
    cuts.extend(density.knots().iter().copied().filter(|&c| c > lower_q && c < upper_q));
    cuts.push(upper_q);
    cuts.push(c_end);
    cuts.dedup();
    if cuts.len() < 2 {
        return density.clone();
    }
    let masses: Vec<f64> = cuts
        .windows(2)
        .map(|w| density.cdf(w[1]) - density.cdf(w[0]))
        .collect();
    PiecewiseDensity::new(cuts, masses).expect("cdf differences sum to one")
}

/// Bin masses from CDF differences. Mass outside the partition range is
/// credited to the two end bins.
pub fn histogram_from_cdf(cdf: impl Fn(f64) -> f64, partition: &Partition) -> ConditionalHistogram {
    let edges = partition.edges();
    let m = partition.bins();
    let mut values: Vec<f64> = edges.iter().map(|&b| cdf(b).clamp(0.0, 1.0)).collect();
    values[0] = 0.0;
    values[m] = 1.0;
    for j in 1..=m {
        values[j] = values[j].max(values[j - 1]);
    }
    let masses = values.windows(2).map(|w| w[1] - w[0]).collect();
    ConditionalHistogram::new(masses).expect("cdf differences sum to one")
}

/// `π_j = F(b_{j+1}) - F(b_j)`, exact for a piecewise-constant density.
pub fn density_to_histogram(density: &PiecewiseDensity, partition: &Partition) -> ConditionalHistogram {
    histogram_from_cdf(|y| density.cdf(y), partition)
}

/// Density for a grid, with tails smoothed below the 1% and above the 99%
/// quantile when those levels are on the grid.
pub fn grid_density(grid: &QuantileGrid, smooth_tails: bool) -> PiecewiseDensity {
    let density = quantiles_to_density(grid);
    if !smooth_tails || grid.steps() < 3 {
        return density;
    }
    tail_smooth(&density, grid.value_at(0.01), grid.value_at(0.99))
}
