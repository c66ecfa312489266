//! Comparison methods calibrated on the same split: CQR, DCP, DistSplit and
//! the DCP-CQR hybrid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{check_alpha, conformal_rank};
use crate::data::Features;
use crate::density::ConditionalDistribution;
use crate::error::{ChrError, Result};
use crate::models::FittedModel;

/// Tail levels `a` of the DCP-CQR candidate pairs `(a, 1 - a)`: 1%..49%.
pub fn dcp_cqr_grid() -> Vec<f64> {
    (1..50).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub intervals: Vec<(f64, f64)>,
    /// Method-specific calibration constants.
    pub constants: Vec<f64>,
}

/// `k`-th smallest value (1-based), `+∞` past the end and `-∞` for rank 0.
fn order_statistic(values: &[f64], rank: usize) -> f64 {
    if rank == 0 {
        return f64::NEG_INFINITY;
    }
    if rank > values.len() {
        return f64::INFINITY;
    }
    let mut sorted = values.to_vec();
    *sorted.select_nth_unstable_by(rank - 1, f64::total_cmp).1
}

fn check_inputs(features: &Features, responses: &[f64], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if responses.is_empty() {
        return Err(ChrError::EmptyCalibrationSet);
    }
    if features.rows() != responses.len() {
        return Err(ChrError::Schema("calibration features and responses differ in length".into()));
    }
    Ok(())
}

/// `[lo - shift, hi + shift]`; a negative shift that crosses the ends
/// collapses to the midpoint.
fn shifted(lo: f64, hi: f64, shift: f64) -> (f64, f64) {
    let (lo, hi) = (lo - shift, hi + shift);
    if lo <= hi {
        (lo, hi)
    } else {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    }
}

/// CQR score `max(q_lo - y, y - q_hi)`.
fn cqr_score(lo: f64, hi: f64, y: f64) -> f64 {
    (lo - y).max(y - hi)
}

/// Shifts the `α/2` and `1 - α/2` quantiles by the conformal quantile of the
/// CQR scores.
pub fn cqr(model: &FittedModel, cal_x: &Features, cal_y: &[f64], test_x: &Features, alpha: f64) -> Result<BaselineResult> {
    check_inputs(cal_x, cal_y, alpha)?;
    let levels = [alpha / 2.0, 1.0 - alpha / 2.0];
    let scores: Vec<f64> = (0..cal_y.len())
        .into_par_iter()
        .map(|i| {
            let q = model.quantiles(cal_x.row(i), &levels);
            cqr_score(q[0], q[1], cal_y[i])
        })
        .collect();
    let shift = order_statistic(&scores, conformal_rank(scores.len(), alpha));
    let intervals = (0..test_x.rows())
        .into_par_iter()
        .map(|i| {
            let q = model.quantiles(test_x.row(i), &levels);
            shifted(q[0], q[1], shift)
        })
        .collect();
    Ok(BaselineResult {
        intervals,
        constants: vec![shift],
    })
}

fn pit_values(model: &FittedModel, cal_x: &Features, cal_y: &[f64]) -> Vec<f64> {
    (0..cal_y.len())
        .into_par_iter()
        .map(|i| model.distribution(cal_x.row(i)).cdf(cal_y[i]))
        .collect()
}

fn interval_between_levels(model: &FittedModel, test_x: &Features, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    (0..test_x.rows())
        .into_par_iter()
        .map(|i| {
            let d = model.distribution(test_x.row(i));
            (d.inverse_cdf(lo), d.inverse_cdf(hi))
        })
        .collect()
}

/// Distributional conformal prediction with score `|F(y | x) - 1/2|`.
pub fn dcp(model: &FittedModel, cal_x: &Features, cal_y: &[f64], test_x: &Features, alpha: f64) -> Result<BaselineResult> {
    check_inputs(cal_x, cal_y, alpha)?;
    let scores: Vec<f64> = pit_values(model, cal_x, cal_y).iter().map(|u| (u - 0.5).abs()).collect();
    let q = order_statistic(&scores, conformal_rank(scores.len(), alpha));
    let (lo, hi) = ((0.5 - q).max(0.0), (0.5 + q).min(1.0));
    Ok(BaselineResult {
        intervals: interval_between_levels(model, test_x, lo, hi),
        constants: vec![q],
    })
}

/// Conformal lower and upper levels of the calibration PIT values, mapped
/// back through each test point's inverse CDF.
pub fn distsplit(model: &FittedModel, cal_x: &Features, cal_y: &[f64], test_x: &Features, alpha: f64) -> Result<BaselineResult> {
    check_inputs(cal_x, cal_y, alpha)?;
    let u = pit_values(model, cal_x, cal_y);
    let n = u.len();
    let lower_rank = ((alpha / 2.0) * (n as f64 + 1.0) + 1e-9).floor() as usize;
    let upper_rank = conformal_rank(n, alpha / 2.0);
    let lo = order_statistic(&u, lower_rank).max(0.0);
    let hi = order_statistic(&u, upper_rank).min(1.0);
    Ok(BaselineResult {
        intervals: interval_between_levels(model, test_x, lo, hi),
        constants: vec![lo, hi],
    })
}

/// Picks the narrowest quantile pair `(a, 1 - a)` from the grid whose
/// calibration coverage passes the conformal rank. Pairs are nested, so
/// narrower means larger `a`. When even `(0.01, 0.99)` falls short, that
/// pair is widened by the CQR shift. Constants are `[a, shift]`.
pub fn dcp_cqr(model: &FittedModel, cal_x: &Features, cal_y: &[f64], test_x: &Features, alpha: f64) -> Result<BaselineResult> {
    check_inputs(cal_x, cal_y, alpha)?;
    let grid = dcp_cqr_grid();
    let levels: Vec<f64> = grid.iter().flat_map(|&a| [a, 1.0 - a]).collect();
    let per_point: Vec<(f64, f64)> = (0..cal_y.len())
        .into_par_iter()
        .map(|i| {
            let q = model.quantiles(cal_x.row(i), &levels);
            let y = cal_y[i];
            // largest a whose pair still holds y; -inf when none does
            let best = grid
                .iter()
                .enumerate()
                .rev()
                .find(|&(k, _)| q[2 * k] <= y && y <= q[2 * k + 1])
                .map_or(f64::NEG_INFINITY, |(_, &a)| a);
            (best, cqr_score(q[0], q[1], y))
        })
        .collect();
    let n = per_point.len();
    let rank = conformal_rank(n, alpha);
    // the a-values sorted from largest: the rank-th of them is covered by
    // exactly the points needed
    let negated: Vec<f64> = per_point.iter().map(|&(a, _)| -a).collect();
    let chosen = -order_statistic(&negated, rank);
    let (a, shift) = if chosen.is_finite() && rank <= n {
        (chosen, 0.0)
    } else {
        let scores: Vec<f64> = per_point.iter().map(|&(_, s)| s).collect();
        (grid[0], order_statistic(&scores, rank))
    };
    let intervals = (0..test_x.rows())
        .into_par_iter()
        .map(|i| {
            let q = model.quantiles(test_x.row(i), &[a, 1.0 - a]);
            shifted(q[0], q[1], shift)
        })
        .collect();
    Ok(BaselineResult {
        intervals,
        constants: vec![a, shift],
    })
}
