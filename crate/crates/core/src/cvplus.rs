//! Cross-validated calibration (CV+).
//!
//! The training sample is cut into `K` folds. Each fold is scored by a model
//! fitted on the other folds. A candidate response for a test point is
//! scored under every fold model in turn, and kept when fewer than
//! `(1 - α)(n + 1)` training scores fall strictly below the score of the
//! candidate under their own fold's model. The reported interval is the
//! hull of the kept bins.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{conformity_score, sample_eps, ChrSettings, STREAM_TEST, STREAM_TRAINING};
use crate::data::Features;
use crate::error::{ChrError, Result};
use crate::interval::Partition;
use crate::models::{FittedModel, ModelSpec, Support};
use crate::sequence::{build_sequence, SequenceConfig};

/// Fold of every sample: a seeded shuffle, then position modulo `K`, so fold
/// sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(ChrError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (position, &i) in order.iter().enumerate() {
        fold_of[i] = position % folds;
    }
    for fold in 0..folds {
        let size = fold_of.iter().filter(|&&f| f == fold).count();
        if size < 2 {
            return Err(ChrError::FoldTooSmall { fold, size });
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlusPredictor {
    pub models: Vec<FittedModel>,
    pub fold_of: Vec<usize>,
    /// Held-out scores of each fold, sorted.
    pub fold_scores: Vec<Vec<usize>>,
    pub partition: Partition,
    pub sequence: SequenceConfig,
    pub alpha: f64,
    pub seed: u64,
}

impl CvPlusPredictor {
    pub fn fit(
        spec: &ModelSpec,
        features: &Features,
        responses: &[f64],
        folds: usize,
        settings: &ChrSettings,
    ) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(ChrError::EmptyTrainingSet);
        }
        let fold_of = assign_folds(n, folds, settings.seed)?;
        let support = Support::from_responses(responses)?;
        let partition = support.partition(settings.bins)?;
        let sequence = settings.sequence_config(n)?;

        let mut models = Vec::with_capacity(folds);
        let mut fold_scores = Vec::with_capacity(folds);
        for fold in 0..folds {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == fold);
            let train_y: Vec<f64> = kept.iter().map(|&i| responses[i]).collect();
            let model = spec.fit(&features.select(&kept), &train_y, support)?;
            let mut scores: Vec<usize> = held
                .par_iter()
                .map(|&i| {
                    let hist = model.histogram(features.row(i), &partition);
                    let eps = sample_eps(settings.seed, STREAM_TRAINING, i as u64);
                    conformity_score(&hist, &partition, responses[i], &sequence, eps)
                })
                .collect();
            scores.sort_unstable();
            models.push(model);
            fold_scores.push(scores);
        }
        Ok(Self {
            models,
            fold_of,
            fold_scores,
            partition,
            sequence,
            alpha: settings.alpha,
            seed: settings.seed,
        })
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// For each bin, the number of training scores strictly below the
    /// candidate score of that bin under the scoring sample's fold model.
    pub fn bin_counts(&self, x: &[f64], eps: f64) -> Vec<usize> {
        let m = self.partition.bins();
        let mut counts = vec![0; m];
        for (model, scores) in self.models.iter().zip(&self.fold_scores) {
            let hist = model.histogram(x, &self.partition);
            let seq = build_sequence(&hist, &self.sequence, eps);
            for (bin, count) in counts.iter_mut().enumerate() {
                let level = seq.first_level_containing(bin);
                *count += scores.partition_point(|&s| s < level);
            }
        }
        counts
    }

    pub fn predict(&self, x: &[f64], index: usize) -> (f64, f64) {
        let eps = sample_eps(self.seed, STREAM_TEST, index as u64);
        let counts = self.bin_counts(x, eps);
        // (1 - α_n) n with α_n = α(1 + 1/n) - 1/n
        let threshold = (1.0 - self.alpha) * (self.n() as f64 + 1.0);
        let admitted: Vec<usize> = (0..counts.len()).filter(|&j| (counts[j] as f64) < threshold).collect();
        match (admitted.first(), admitted.last()) {
            (Some(&lo), Some(&hi)) => (self.partition.edges()[lo], self.partition.edges()[hi + 1]),
            _ => {
                let best = (0..counts.len()).min_by_key(|&j| (counts[j], j)).expect("at least one bin");
                let mid = self.partition.midpoint(best);
                (mid, mid)
            }
        }
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
    use crate::synthetic::{generate_synthetic, SkewedLaw, SyntheticConfig};

    #[test]
    fn folds_are_balanced_and_checked() {
        let folds = assign_folds(23, 5, 1).unwrap();
        let sizes: Vec<usize> = (0..5).map(|k| folds.iter().filter(|&&f| f == k).count()).collect();
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(matches!(assign_folds(5, 3, 1), Err(ChrError::FoldTooSmall { size: 1, .. })));
        assert!(assign_folds(10, 1, 1).is_err());
    }

    fn toy_predictor(scores: Vec<Vec<usize>>) -> CvPlusPredictor {
        let data = generate_synthetic(&SyntheticConfig {
            n_samples: 8,
            law: SkewedLaw::default(),
            noise_features: 0,
            seed: 1,
        })
        .unwrap();
        let support = Support::from_responses(&data.responses).unwrap();
        let model = ModelSpec::oracle(SkewedLaw::default()).fit(&data.features, &data.responses, support).unwrap();
        CvPlusPredictor {
            models: vec![model.clone(), model],
            fold_of: vec![0, 1, 0, 1],
            fold_scores: scores,
            partition: support.partition(20).unwrap(),
            sequence: SequenceConfig::new(10, 9, true).unwrap(),
            alpha: 0.1,
            seed: 3,
        }
    }

    #[test]
    fn maximal_training_scores_admit_every_lower_scoring_bin() {
        let cv = toy_predictor(vec![vec![10, 10], vec![10, 10]]);
        let counts = cv.bin_counts(&[2.0], 0.5);
        let hist = cv.models[0].histogram(&[2.0], &cv.partition);
        let seq = build_sequence(&hist, &cv.sequence, 0.5);
        for (bin, &count) in counts.iter().enumerate() {
            if seq.first_level_containing(bin) < 10 {
                assert_eq!(count, 0);
            }
        }
        let (lo, hi) = cv.predict(&[2.0], 0);
        assert!(lo < hi);
    }

    #[test]
    fn zero_scores_exclude_nothing_with_minimal_score() {
        // a bin scoring 0 has no training score strictly below it
        let cv = toy_predictor(vec![vec![0, 0], vec![0, 0]]);
        let counts = cv.bin_counts(&[1.0], 1.0);
        let hist = cv.models[0].histogram(&[1.0], &cv.partition);
        let seq = build_sequence(&hist, &cv.sequence, 1.0);
        for (bin, &count) in counts.iter().enumerate() {
            if seq.first_level_containing(bin) == 0 {
                assert_eq!(count, 0);
            } else {
                assert_eq!(count, 4);
            }
        }
    }

    #[test]
    fn covers_most_points_on_synthetic_data() {
        let cfg = SyntheticConfig {
            n_samples: 400,
            law: SkewedLaw::default(),
            noise_features: 0,
            seed: 11,
        };
        let train = generate_synthetic(&cfg).unwrap();
        let test = generate_synthetic(&SyntheticConfig { seed: 12, ..cfg }).unwrap();
        let settings = ChrSettings::new(0.1, 60, 5);
        let cv = CvPlusPredictor::fit(&ModelSpec::knn(), &train.features, &train.responses, 5, &settings).unwrap();
        let intervals = cv.predict_all(&test.features);
        let covered = intervals
            .iter()
            .zip(&test.responses)
            .filter(|((lo, hi), y)| lo <= *y && *y <= hi)
            .count();
        assert!(covered as f64 / 400.0 > 0.8);
    }
}
