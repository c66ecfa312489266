//! Coverage and width metrics, including the worst-slab estimate of
//! conditional coverage.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Features, Standardizer};
use crate::error::{ChrError, Result};

pub fn covered(intervals: &[(f64, f64)], responses: &[f64]) -> Vec<bool> {
    intervals
        .iter()
        .zip(responses)
        .map(|(&(lo, hi), &y)| lo <= y && y <= hi)
        .collect()
}

/// Fraction of responses inside their interval.
pub fn marginal_coverage(intervals: &[(f64, f64)], responses: &[f64]) -> f64 {
    let flags = covered(intervals, responses);
    flags.iter().filter(|&&c| c).count() as f64 / flags.len().max(1) as f64
}

pub fn mean_width(intervals: &[(f64, f64)]) -> f64 {
    intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / intervals.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WscSettings {
    /// Minimum fraction of the selection split inside a slab.
    pub delta: f64,
    pub directions: usize,
    /// Fraction of points used to choose the slab.
    pub selection_fraction: f64,
    pub seed: u64,
}

impl Default for WscSettings {
    fn default() -> Self {
        Self {
            delta: 0.1,
            directions: 1000,
            selection_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Lowest-coverage slab `lo <= v·x <= hi` along one direction, over slabs
/// holding at least `min_size` of the given points.
fn worst_slab(projections: &[f64], flags: &[bool], min_size: usize) -> (f64, f64, f64) {
    let mut order: Vec<usize> = (0..projections.len()).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]));
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0u32);
    for &i in &order {
        prefix.push(prefix[prefix.len() - 1] + u32::from(flags[i]));
    }
    let n = order.len();
    let mut best = (f64::INFINITY, 0, n - 1);
    for a in 0..=n - min_size {
        for b in a + min_size - 1..n {
            let cov = f64::from(prefix[b + 1] - prefix[a]) / (b - a + 1) as f64;
            if cov < best.0 {
                best = (cov, a, b);
            }
        }
    }
    (best.0, projections[order[best.1]], projections[order[best.2]])
}

/// Worst-slab coverage: slabs are chosen on a random selection split and
/// their coverage is reported on the remaining points. Features are
/// standardized with their own statistics first. An empty held-out slab
/// falls back to the held-out marginal coverage.
pub fn worst_slab_coverage(features: &Features, flags: &[bool], settings: &WscSettings) -> Result<f64> {
    let n = flags.len();
    if features.rows() != n {
        return Err(ChrError::Schema("feature rows and coverage flags differ in length".into()));
    }
    if !(settings.delta > 0.0 && settings.delta < 1.0) || settings.directions == 0 {
        return Err(ChrError::Config(format!("invalid worst-slab settings {settings:?}")));
    }
    let needed = (1.0 / settings.delta).ceil() as usize;
    let n_select = ((settings.selection_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    if n < needed || n_select == 0 {
        return Err(ChrError::TooFewTestPoints { needed, got: n });
    }
    let x = Standardizer::fit(features).transform(features);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (select, holdout) = order.split_at(n_select);
    let select_flags: Vec<bool> = select.iter().map(|&i| flags[i]).collect();
    let min_size = ((settings.delta * n_select as f64).ceil() as usize).clamp(1, n_select);

    let project = |v: &[f64], i: usize| x.row(i).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut worst: Option<(f64, Vec<f64>, f64, f64)> = None;
    for _ in 0..settings.directions {
        let mut v: Vec<f64> = (0..x.cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|a| *a /= norm);
        let z: Vec<f64> = select.iter().map(|&i| project(&v, i)).collect();
        let (cov, lo, hi) = worst_slab(&z, &select_flags, min_size);
        if worst.as_ref().is_none_or(|w| cov < w.0) {
            worst = Some((cov, v, lo, hi));
        }
    }
    let (_, v, lo, hi) = worst.expect("at least one direction");
    let inside: Vec<usize> = holdout
        .iter()
        .copied()
        .filter(|&i| (lo..=hi).contains(&project(&v, i)))
        .collect();
    let pool = if inside.is_empty() { holdout } else { &inside[..] };
    Ok(pool.iter().filter(|&&i| flags[i]).count() as f64 / pool.len() as f64)
}
