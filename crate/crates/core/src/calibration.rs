//! Conformity scores and split-conformal calibration.
//!
//! The score of `(x, y)` is the first level of the nested family at `x` whose
//! interval holds the bin of `y`. Calibration takes the conformal order
//! statistic of held-out scores, and prediction reports that level's
//! interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{ChrError, Result};
use crate::interval::{ConditionalHistogram, Partition};
use crate::models::FittedModel;
use crate::sequence::{build_sequence, first_level_containing, interval_to_response_range, SequenceConfig};

/// Random streams for the per-sample trim draws.
pub const STREAM_CALIBRATION: u64 = 0;
pub const STREAM_TEST: u64 = 1;
pub const STREAM_TRAINING: u64 = 2;

/// Uniform draw in `(0, 1]` for sample `index` of `stream`. Each sample gets
/// its own position in a ChaCha stream, so draws do not depend on evaluation
/// order.
pub fn sample_eps(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // one f64 consumes two 32-bit words
    rng.set_word_pos(u128::from(index) * 2);
    1.0 - rng.random::<f64>()
}

/// `⌈(1 - α)(n + 1)⌉`, the rank of the conformal order statistic.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ChrError::Config(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// `min { t : y ∈ S_t }`; responses outside the partition score `T`.
pub fn conformity_score(
    hist: &ConditionalHistogram,
    partition: &Partition,
    y: f64,
    cfg: &SequenceConfig,
    eps: f64,
) -> usize {
    match partition.bin_of(y) {
        Some(bin) => first_level_containing(hist, cfg, eps, bin),
        None => cfg.levels,
    }
}

/// Calibration scores sharing one resolution `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformityScoreSet {
    scores: Vec<usize>,
    levels: usize,
}

impl ConformityScoreSet {
    pub fn new(scores: Vec<usize>, levels: usize) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|&&s| s > levels) {
            return Err(ChrError::Config(format!("score {bad} exceeds resolution {levels}")));
        }
        Ok(Self { scores, levels })
    }

    pub fn scores(&self) -> &[usize] {
        &self.scores
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub t_hat: usize,
    pub alpha: f64,
    pub n_cal: usize,
}

/// `t̂` is the `⌈(1 - α)(n + 1)⌉`-th smallest score, or `T` when that rank
/// exceeds `n`.
pub fn split_calibrate(scores: &ConformityScoreSet, alpha: f64) -> Result<CalibrationResult> {
    check_alpha(alpha)?;
    let n = scores.len();
    if n == 0 {
        return Err(ChrError::EmptyCalibrationSet);
    }
    let rank = conformal_rank(n, alpha);
    let t_hat = if rank > n || rank == 0 {
        if rank == 0 { 0 } else { scores.levels() }
    } else {
        let mut sorted = scores.scores().to_vec();
        *sorted.select_nth_unstable(rank - 1).1
    };
    Ok(CalibrationResult { t_hat, alpha, n_cal: n })
}

/// Response-unit interval `S_t̂` at a test point. `t̂ = T` gives the whole
/// partition range; an empty `S_t̂` collapses to the midpoint of the lightest
/// bin.
pub fn predict_interval(
    hist: &ConditionalHistogram,
    partition: &Partition,
    cal: &CalibrationResult,
    cfg: &SequenceConfig,
    eps: f64,
) -> (f64, f64) {
    if cal.t_hat >= cfg.levels {
        return (partition.lower(), partition.upper());
    }
    let set = build_sequence(hist, cfg, eps).set(cal.t_hat);
    interval_to_response_range(set, partition).unwrap_or_else(|_| {
        let mid = partition.midpoint(lightest_bin(hist));
        (mid, mid)
    })
}

fn lightest_bin(hist: &ConditionalHistogram) -> usize {
    let masses = hist.masses();
    (0..masses.len())
        .min_by(|&a, &b| masses[a].total_cmp(&masses[b]).then(a.cmp(&b)))
        .expect("histograms have at least one bin")
}

/// Settings shared by the split and cross-validated calibrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrSettings {
    pub alpha: f64,
    pub bins: usize,
    /// Resolution `T`; defaults to the number of scored samples.
    pub levels: Option<usize>,
    /// Starting level `t̄`; defaults to `round((1 - α) T)`.
    pub start: Option<usize>,
    pub randomize: bool,
    pub seed: u64,
}

impl ChrSettings {
    pub fn new(alpha: f64, bins: usize, seed: u64) -> Self {
        Self {
            alpha,
            bins,
            levels: None,
            start: None,
            randomize: true,
            seed,
        }
    }

    pub(crate) fn sequence_config(&self, n_scored: usize) -> Result<SequenceConfig> {
        check_alpha(self.alpha)?;
        let levels = self.levels.unwrap_or(n_scored).max(1);
        match self.start {
            Some(start) => SequenceConfig::new(levels, start, self.randomize),
            None => SequenceConfig::for_alpha(levels, self.alpha, self.randomize),
        }
    }
}

/// A fitted model with its partition and calibrated level, ready to emit
/// intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChrPredictor {
    pub model: FittedModel,
    pub partition: Partition,
    pub sequence: SequenceConfig,
    pub calibration: CalibrationResult,
    pub seed: u64,
}

impl ChrPredictor {
    /// Scores the calibration sample and picks `t̂`. The partition spans the
    /// model's support.
    pub fn calibrate(model: FittedModel, features: &Features, responses: &[f64], settings: &ChrSettings) -> Result<Self> {
        if responses.is_empty() {
            return Err(ChrError::EmptyCalibrationSet);
        }
        if settings.bins == 0 {
            return Err(ChrError::Config("bin count must be positive".into()));
        }
        let partition = model.support().partition(settings.bins)?;
        let sequence = settings.sequence_config(responses.len())?;
        let scores: Vec<usize> = (0..responses.len())
            .into_par_iter()
            .map(|i| {
                let hist = model.histogram(features.row(i), &partition);
                let eps = sample_eps(settings.seed, STREAM_CALIBRATION, i as u64);
                conformity_score(&hist, &partition, responses[i], &sequence, eps)
            })
            .collect();
        let scores = ConformityScoreSet::new(scores, sequence.levels)?;
        let calibration = split_calibrate(&scores, settings.alpha)?;
        Ok(Self {
            model,
            partition,
            sequence,
            calibration,
            seed: settings.seed,
        })
    }

    /// Interval for test point number `index`; the index selects its trim
    /// draw.
    pub fn predict(&self, x: &[f64], index: usize) -> (f64, f64) {
        let hist = self.model.histogram(x, &self.partition);
        let eps = sample_eps(self.seed, STREAM_TEST, index as u64);
        predict_interval(&hist, &self.partition, &self.calibration, &self.sequence, eps)
    }

    pub fn predict_all(&self, features: &Features) -> Vec<(f64, f64)> {
        (0..features.rows())
            .into_par_iter()
            .map(|i| self.predict(features.row(i), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::BinInterval;
    use crate::sequence::build_sequence_reference;
    use proptest::prelude::*;

    fn running() -> (ConditionalHistogram, Partition, SequenceConfig) {
        (
            ConditionalHistogram::new(vec![0.1, 0.5, 0.3, 0.1]).unwrap(),
            Partition::new(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
            SequenceConfig::new(10, 9, false).unwrap(),
        )
    }

    #[test]
    fn running_example_scores() {
        let (h, p, cfg) = running();
        assert_eq!(conformity_score(&h, &p, 3.5, &cfg, 1.0), 10);
        assert_eq!(conformity_score(&h, &p, 5.0, &cfg, 1.0), 10);
        assert_eq!(conformity_score(&h, &p, -0.1, &cfg, 1.0), 10);
        let s0 = build_sequence(&h, &cfg, 1.0).set(0).unwrap();
        assert_eq!(conformity_score(&h, &p, p.midpoint(s0.lo), &cfg, 1.0), 0);
    }

    #[test]
    fn calibration_ranks() {
        let nine = ConformityScoreSet::new(vec![3, 9, 1, 4, 7, 2, 8, 6, 5], 20).unwrap();
        assert_eq!(split_calibrate(&nine, 0.1).unwrap().t_hat, 9);
        let scores: Vec<usize> = (1..=99).rev().collect();
        let many = ConformityScoreSet::new(scores, 200).unwrap();
        assert_eq!(split_calibrate(&many, 0.1).unwrap().t_hat, 90);
        let three = ConformityScoreSet::new(vec![0, 1, 2], 7).unwrap();
        assert_eq!(split_calibrate(&three, 0.01).unwrap().t_hat, 7);
        let empty = ConformityScoreSet::new(vec![], 7).unwrap();
        assert!(matches!(split_calibrate(&empty, 0.1), Err(ChrError::EmptyCalibrationSet)));
        assert!(split_calibrate(&three, 1.0).is_err());
        assert!(ConformityScoreSet::new(vec![8], 7).is_err());
    }

    #[test]
    fn conformal_rank_values() {
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(conformal_rank(99, 0.1), 90);
        assert_eq!(conformal_rank(3, 0.01), 4);
        assert_eq!(conformal_rank(1000, 0.1), 901);
    }

    #[test]
    fn prediction_examples() {
        let (h, p, cfg) = running();
        let at = |t_hat| CalibrationResult { t_hat, alpha: 0.1, n_cal: 10 };
        assert_eq!(predict_interval(&h, &p, &at(10), &cfg, 1.0), (0.0, 4.0));
        assert_eq!(predict_interval(&h, &p, &at(9), &cfg, 1.0), (0.0, 3.0));

        let uniform = ConditionalHistogram::uniform(4);
        let cfg = SequenceConfig::new(4, 4, false).unwrap();
        let (lo, hi) = predict_interval(&uniform, &p, &at(0), &cfg, 1.0);
        assert_eq!(hi - lo, 1.0);

        // randomized S_0 is empty: zero width at the lightest bin
        let cfg = SequenceConfig::new(10, 9, true).unwrap();
        assert_eq!(predict_interval(&h, &p, &at(0), &cfg, 0.5), (0.5, 0.5));
    }

    #[test]
    fn eps_draws_are_reproducible_and_positive() {
        let a: Vec<f64> = (0..100).map(|i| sample_eps(7, STREAM_TEST, i)).collect();
        let b: Vec<f64> = (0..100).rev().map(|i| sample_eps(7, STREAM_TEST, i)).collect();
        assert!(a.iter().zip(b.iter().rev()).all(|(x, y)| x == y));
        assert!(a.iter().all(|&e| e > 0.0 && e <= 1.0));
        assert_ne!(sample_eps(7, STREAM_TEST, 3), sample_eps(7, STREAM_CALIBRATION, 3));
        let mean = (0..20_000).map(|i| sample_eps(1, 0, i)).sum::<f64>() / 20_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn score_matches_materialized_sequence(
            raw in prop::collection::vec(0.0f64..1.0, 1..15),
            levels in 1usize..60,
            start_frac in 0.0f64..=1.0,
            eps in prop_oneof![Just(1.0f64), 1e-9f64..1.0],
            randomize in any::<bool>(),
            y in -1.0f64..16.0,
        ) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-3;
            let masses: Vec<f64> = raw.iter().map(|v| (v + 1e-3 / raw.len() as f64) / total).collect();
            let h = ConditionalHistogram::new(masses).unwrap();
            let p = Partition::uniform(0.0, h.bins() as f64, h.bins()).unwrap();
            let cfg = SequenceConfig::new(levels, (start_frac * levels as f64) as usize, randomize).unwrap();
            let sets = build_sequence_reference(&h, &cfg, eps);
            let expected = p
                .bin_of(y)
                .and_then(|b| sets.iter().position(|s| s.is_some_and(|s: BinInterval| s.contains_bin(b))))
                .unwrap_or(levels);
            prop_assert_eq!(conformity_score(&h, &p, y, &cfg, eps), expected);
        }

        #[test]
        fn smaller_alpha_never_lowers_t_hat(scores in prop::collection::vec(0usize..50, 1..80), a in 0.01f64..0.5, b in 0.01f64..0.5) {
            let set = ConformityScoreSet::new(scores.clone(), 50).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(split_calibrate(&set, lo).unwrap().t_hat >= split_calibrate(&set, hi).unwrap().t_hat);
            let mut reversed = scores;
            reversed.reverse();
            let permuted = ConformityScoreSet::new(reversed, 50).unwrap();
            prop_assert_eq!(split_calibrate(&permuted, a).unwrap(), split_calibrate(&set, a).unwrap());
        }
    }
}
