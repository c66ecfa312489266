//! k-nearest-neighbour conditional quantiles.

use serde::{Deserialize, Serialize};

use crate::data::{Features, Standardizer};
use crate::error::{ChrError, Result};

/// Default neighbourhood size `max(50, n / 20)`, capped at `n`.
pub fn default_k(n: usize) -> usize {
    50.max(n / 20).min(n)
}

/// Stores the standardized training sample and answers quantile queries
/// with empirical quantiles of the nearest responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub(crate) standardizer: Standardizer,
    pub(crate) train: Features,
    pub(crate) responses: Vec<f64>,
    pub(crate) k: usize,
}

impl KnnModel {
    pub fn fit(features: &Features, responses: &[f64], k: Option<usize>) -> Result<Self> {
        let n = responses.len();
        if n == 0 || features.rows() != n {
            return Err(ChrError::EmptyTrainingSet);
        }
        let k = k.unwrap_or_else(|| default_k(n));
        if k == 0 || k > n {
            return Err(ChrError::Config(format!("neighbour count {k} must be in 1..={n}")));
        }
        let standardizer = Standardizer::fit(features);
        Ok(Self {
            train: standardizer.transform(features),
            standardizer,
            responses: responses.to_vec(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sorted responses of the `k` nearest training points. Distance ties go
    /// to the lower training index.
    pub fn neighbour_responses(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        let mut dist: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, row)| (row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, order);
        }
        let mut ys: Vec<f64> = dist[..self.k].iter().map(|&(_, i)| self.responses[i]).collect();
        ys.sort_by(f64::total_cmp);
        ys
    }
}

/// Generalized-inverse empirical quantile of sorted values:
/// `v[ceil(level * k) - 1]`, with level 0 mapping to the minimum.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let k = sorted.len();
    let rank = (level.clamp(0.0, 1.0) * k as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, k) - 1]
}
