//! Conditional quantile estimators behind one interface.
//!
//! Every fitted model answers three questions at a feature point: its
//! quantile grid (support bounds at levels 0 and 1), a conditional
//! distribution with CDF and inverse CDF, and bin masses on a partition.
//! The k-NN and linear models go through the piecewise density of their
//! quantile grid with smoothed tails; the oracle uses the true law.

mod knn;
mod linear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use knn::{default_k, empirical_quantile, KnnModel};
pub use linear::{pinball_loss, LinearConfig, LinearModel};

use crate::data::Features;
use crate::density::{
    density_to_histogram, grid_density, histogram_from_cdf, ConditionalDistribution, PiecewiseDensity,
    QuantileGrid,
};
use crate::error::{ChrError, Result};
use crate::interval::{response_bounds, ConditionalHistogram, Partition};
use crate::synthetic::{ConditionalLaw, SkewedLaw};

/// Padding of the observed response range used for the support bounds.
pub const SUPPORT_PAD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Linear,
    Oracle,
}

impl FromStr for ModelKind {
    type Err = ChrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "linear" => Ok(Self::Linear),
            "oracle" => Ok(Self::Oracle),
            other => Err(ChrError::Config(format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Knn => "knn",
            Self::Linear => "linear",
            Self::Oracle => "oracle",
        })
    }
}

/// Conservative response bounds `[lower, upper]` shared by the quantile grid
/// and the bin partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Support {
    /// Observed range widened by 20% on each side.
    pub fn from_responses(responses: &[f64]) -> Result<Self> {
        let (lower, upper) = response_bounds(responses, SUPPORT_PAD)?;
        Ok(Self { lower, upper })
    }

    pub fn partition(&self, bins: usize) -> Result<Partition> {
        Partition::uniform(self.lower, self.upper, bins)
    }
}

/// Which model to fit and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Neighbour count; `None` uses [`default_k`].
    pub knn_k: Option<usize>,
    pub linear: LinearConfig,
    /// Required for the oracle.
    pub law: Option<SkewedLaw>,
}

impl ModelSpec {
    pub fn knn() -> Self {
        Self {
            kind: ModelKind::Knn,
            knn_k: None,
            linear: LinearConfig::default(),
            law: None,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: ModelKind::Linear,
            ..Self::knn()
        }
    }

    pub fn oracle(law: SkewedLaw) -> Self {
        Self {
            kind: ModelKind::Oracle,
            law: Some(law),
            ..Self::knn()
        }
    }

    pub fn fit(&self, features: &Features, responses: &[f64], support: Support) -> Result<FittedModel> {
        let levels = QuantileGrid::default_levels();
        let inner = match self.kind {
            ModelKind::Knn => Inner::Knn(KnnModel::fit(features, responses, self.knn_k)?),
            ModelKind::Linear => {
                let interior = &levels[1..levels.len() - 1];
                Inner::Linear(LinearModel::fit(features, responses, interior, &self.linear)?)
            }
            ModelKind::Oracle => Inner::Oracle(self.law.ok_or(ChrError::UnsupportedGenerator)?),
        };
        Ok(FittedModel { support, levels, inner })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Inner {
    Knn(KnnModel),
    Linear(LinearModel),
    Oracle(SkewedLaw),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub(crate) support: Support,
    pub(crate) levels: Vec<f64>,
    pub(crate) inner: Inner,
}

/// Conditional distribution produced by a fitted model at one point.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelDistribution {
    Piecewise(PiecewiseDensity),
    Exact(ConditionalLaw),
}

impl ConditionalDistribution for ModelDistribution {
    fn cdf(&self, y: f64) -> f64 {
        match self {
            Self::Piecewise(d) => d.cdf(y),
            Self::Exact(law) => law.cdf(y),
        }
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            Self::Piecewise(d) => d.inverse_cdf(u),
            Self::Exact(law) => law.inverse_cdf(u),
        }
    }
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self.inner {
            Inner::Knn(_) => ModelKind::Knn,
            Inner::Linear(_) => ModelKind::Linear,
            Inner::Oracle(_) => ModelKind::Oracle,
        }
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Convergence flag of the linear model; other models always report true.
    pub fn converged(&self) -> bool {
        match &self.inner {
            Inner::Linear(m) => m.converged(),
            _ => true,
        }
    }

    /// Quantiles at arbitrary levels, clamped to the support. Level 0 and 1
    /// give the support bounds.
    pub fn quantiles(&self, x: &[f64], levels: &[f64]) -> Vec<f64> {
        let Support { lower, upper } = self.support;
        let bound = |a: f64| (a <= 0.0).then_some(lower).or((a >= 1.0).then_some(upper));
        match &self.inner {
            Inner::Knn(m) => {
                let ys = m.neighbour_responses(x);
                levels
                    .iter()
                    .map(|&a| bound(a).unwrap_or_else(|| empirical_quantile(&ys, a).clamp(lower, upper)))
                    .collect()
            }
            Inner::Linear(_) => {
                let grid = self.quantile_grid(x);
                levels.iter().map(|&a| grid.value_at(a)).collect()
            }
            Inner::Oracle(law) => levels
                .iter()
                .map(|&a| bound(a).unwrap_or_else(|| law.quantile(x[0], a).clamp(lower, upper)))
                .collect(),
        }
    }

    pub fn quantile(&self, x: &[f64], level: f64) -> f64 {
        self.quantiles(x, &[level])[0]
    }

    /// Monotone quantile grid at the model's levels.
    pub fn quantile_grid(&self, x: &[f64]) -> QuantileGrid {
        let Support { lower, upper } = self.support;
        let interior_levels = &self.levels[1..self.levels.len() - 1];
        let interior = match &self.inner {
            Inner::Knn(m) => {
                let ys = m.neighbour_responses(x);
                interior_levels.iter().map(|&a| empirical_quantile(&ys, a)).collect()
            }
            Inner::Linear(m) => m.predict(x),
            Inner::Oracle(law) => interior_levels.iter().map(|&a| law.quantile(x[0], a)).collect(),
        };
        QuantileGrid::from_estimates(self.levels.clone(), interior, lower, upper)
            .expect("clamped and sorted estimates form a valid grid")
    }

    pub fn distribution(&self, x: &[f64]) -> ModelDistribution {
        match &self.inner {
            Inner::Oracle(law) => ModelDistribution::Exact(ConditionalLaw {
                law: *law,
                x: x[0],
                lower: self.support.lower,
                upper: self.support.upper,
            }),
            _ => ModelDistribution::Piecewise(grid_density(&self.quantile_grid(x), true)),
        }
    }

    /// Bin masses of the conditional distribution at `x`.
    pub fn histogram(&self, x: &[f64], partition: &Partition) -> ConditionalHistogram {
        match self.distribution(x) {
            ModelDistribution::Piecewise(d) => density_to_histogram(&d, partition),
            ModelDistribution::Exact(law) => histogram_from_cdf(|y| law.cdf(y), partition),
        }
    }
}
