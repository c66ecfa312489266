//! Linear quantile regression fitted by full-batch subgradient descent on the
//! pinball loss, one model per level.

use serde::{Deserialize, Serialize};

use crate::data::{Features, Standardizer};
use crate::error::{ChrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub iterations: usize,
    /// Step size of the first iteration, in standardized units.
    pub initial_step: f64,
    /// Step size of the last iteration; steps decay geometrically.
    pub final_step: f64,
    /// Ridge penalty on the slopes.
    pub ridge: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            initial_step: 0.5,
            final_step: 1e-4,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub(crate) standardizer: Standardizer,
    pub(crate) response_mean: f64,
    pub(crate) response_scale: f64,
    pub(crate) levels: Vec<f64>,
    /// Per level: intercept followed by slopes, all in standardized units.
    pub(crate) coefficients: Vec<Vec<f64>>,
    pub(crate) converged: bool,
}

/// Mean pinball loss of residuals `r = y - prediction` at `level`.
pub fn pinball_loss(residuals: impl Iterator<Item = f64>, level: f64) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for r in residuals {
        total += if r >= 0.0 { level * r } else { (level - 1.0) * r };
        n += 1;
    }
    total / n.max(1) as f64
}

impl LinearModel {
    /// Fits one model per entry of `levels` (each in `(0, 1)`).
    pub fn fit(features: &Features, responses: &[f64], levels: &[f64], cfg: &LinearConfig) -> Result<Self> {
        let n = responses.len();
        if n == 0 || features.rows() != n {
            return Err(ChrError::EmptyTrainingSet);
        }
        if levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(ChrError::Config("pinball levels must lie in (0, 1)".into()));
        }
        if cfg.iterations == 0 || !(cfg.initial_step > 0.0 && cfg.final_step > 0.0) || cfg.ridge < 0.0 {
            return Err(ChrError::Config(format!("invalid linear model settings {cfg:?}")));
        }
        let standardizer = Standardizer::fit(features);
        let x = standardizer.transform(features);
        let response_mean = responses.iter().sum::<f64>() / n as f64;
        let sd = (responses.iter().map(|y| (y - response_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let response_scale = if sd > 1e-12 { sd } else { 1.0 };
        let y: Vec<f64> = responses.iter().map(|v| (v - response_mean) / response_scale).collect();

        let mut coefficients = Vec::with_capacity(levels.len());
        let mut converged = true;
        for &level in levels {
            let (beta, ok) = fit_level(&x, &y, level, cfg);
            coefficients.push(beta);
            converged &= ok;
        }
        Ok(Self {
            standardizer,
            response_mean,
            response_scale,
            levels: levels.to_vec(),
            coefficients,
            converged,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Whether every level's loss had stopped improving by the end of the
    /// iteration budget. The best iterate is used either way.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Predictions at every fitted level, sorted to remove crossings.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        let mut out: Vec<f64> = self
            .coefficients
            .iter()
            .map(|beta| {
                let fit = beta[0] + beta[1..].iter().zip(&z).map(|(b, v)| b * v).sum::<f64>();
                self.response_mean + self.response_scale * fit
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

fn predict_row(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
}

/// Returns the best iterate and whether the loss plateaued.
fn fit_level(x: &Features, y: &[f64], level: f64, cfg: &LinearConfig) -> (Vec<f64>, bool) {
    let (n, d) = (y.len(), x.cols());
    let decay = (cfg.final_step / cfg.initial_step).powf(1.0 / cfg.iterations as f64);
    let objective = |beta: &[f64]| {
        let fit = pinball_loss(x.iter().zip(y).map(|(row, yi)| yi - predict_row(beta, row)), level);
        fit + 0.5 * cfg.ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    };
    let mut beta = vec![0.0; d + 1];
    let mut best = beta.clone();
    let mut best_loss = objective(&beta);
    let mut loss_at_check = best_loss;
    let check_from = cfg.iterations - cfg.iterations / 5;
    let mut grad = vec![0.0; d + 1];
    let mut step = cfg.initial_step;
    for it in 0..cfg.iterations {
        if it == check_from {
            loss_at_check = best_loss;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, yi) in x.iter().zip(y) {
            // d/dβ of the pinball loss at residual r = y - xβ
            let weight = if yi - predict_row(&beta, row) > 0.0 { -level } else { 1.0 - level };
            grad[0] += weight;
            for (g, v) in grad[1..].iter_mut().zip(row) {
                *g += weight * v;
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g /= n as f64;
            if j > 0 {
                *g += cfg.ridge * beta[j];
            }
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= step * g;
        }
        step *= decay;
        let loss = objective(&beta);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&beta);
        }
    }
    let plateaued = loss_at_check - best_loss <= 1e-6 * (1.0 + best_loss.abs());
    (best, plateaued)
}
