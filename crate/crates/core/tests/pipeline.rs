use std::path::Path;

use chr_core::calibration::{
    conformity_score, predict_interval, split_calibrate, CalibrationResult, ChrPredictor, ChrSettings,
    ConformityScoreSet,
};
use chr_core::data::{ingest_csv, split_indices};
use chr_core::interval::{ConditionalHistogram, Partition};
use chr_core::metrics::marginal_coverage;
use chr_core::models::{ModelSpec, Support};
use chr_core::persist::{Artifact, Predictor};
use chr_core::sequence::{build_sequence, SequenceConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case() -> impl Strategy<Value = (ConditionalHistogram, SequenceConfig, f64, f64)> {
    (1usize..30, 1usize..60)
        .prop_flat_map(|(m, levels)| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], m),
                Just(levels),
                0..=levels,
                any::<bool>(),
                0.0f64..1.0,
                0.0f64..1.0,
            )
        })
        .prop_filter_map("positive mass", |(raw, levels, start, randomize, u, y)| {
            let total: f64 = raw.iter().sum();
            (total > 0.0).then(|| {
                let hist = ConditionalHistogram::new(raw.iter().map(|p| p / total).collect()).unwrap();
                let cfg = SequenceConfig::new(levels, start, randomize).unwrap();
                (hist, cfg, 1.0 - u, y)
            })
        })
}

proptest! {
    #[test]
    fn covered_exactly_when_score_is_at_most_calibrated_level((hist, cfg, eps, y) in case(), t_frac in 0.0f64..1.0) {
        let partition = Partition::uniform(0.0, 1.0, hist.bins()).unwrap();
        let score = conformity_score(&hist, &partition, y, &cfg, eps);
        let seq = build_sequence(&hist, &cfg, eps);
        let bin = partition.bin_of(y).unwrap();
        let first = (0..=cfg.levels).find(|&t| seq.set(t).is_some_and(|s| s.contains_bin(bin))).unwrap_or(cfg.levels);
        prop_assert_eq!(score, first);

        let t_hat = ((t_frac * cfg.levels as f64) as usize).min(cfg.levels - 1);
        let cal = CalibrationResult { t_hat, alpha: 0.1, n_cal: 1 };
        let (lo, hi) = predict_interval(&hist, &partition, &cal, &cfg, eps);
        if seq.set(t_hat).is_some() {
            // y never sits on an edge, so bin membership and range agree
            prop_assert_eq!(lo <= y && y <= hi, score <= t_hat);
        } else {
            prop_assert_eq!(lo, hi);
        }
    }

    #[test]
    fn intervals_widen_with_the_calibrated_level((hist, cfg, eps, _y) in case()) {
        let partition = Partition::uniform(-1.0, 1.0, hist.bins()).unwrap();
        let mut previous: Option<(f64, f64)> = None;
        for t_hat in 0..=cfg.levels {
            let cal = CalibrationResult { t_hat, alpha: 0.1, n_cal: 1 };
            let set = build_sequence(&hist, &cfg, eps).set(t_hat.min(cfg.levels));
            let range = predict_interval(&hist, &partition, &cal, &cfg, eps);
            if set.is_none() && t_hat < cfg.levels {
                continue;
            }
            if let Some((lo, hi)) = previous {
                prop_assert!(range.0 <= lo && hi <= range.1);
            }
            previous = Some(range);
        }
        prop_assert_eq!(previous, Some((partition.lower(), partition.upper())));
    }
}

#[test]
fn exchangeable_scores_are_covered_at_the_nominal_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, trials, alpha) = (19, 20_000, 0.1);
    let mut hits = 0;
    for _ in 0..trials {
        let draws: Vec<usize> = (0..=n).map(|_| rng.random_range(0..50)).collect();
        let scores = ConformityScoreSet::new(draws[..n].to_vec(), 50).unwrap();
        let t_hat = split_calibrate(&scores, alpha).unwrap().t_hat;
        hits += usize::from(draws[n] <= t_hat);
    }
    let rate = hits as f64 / trials as f64;
    let se = (0.9 * 0.1 / trials as f64).sqrt();
    assert!(rate >= 1.0 - alpha - 3.0 * se, "{rate}");
}

#[test]
fn csv_to_saved_predictor() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.csv");
    let data = ingest_csv(&path, "y").unwrap();
    assert_eq!((data.len(), data.feature_names.clone()), (500, vec!["x1".to_string(), "x2".to_string()]));
    let groups = split_indices(data.len(), &[0.4, 0.4, 0.2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (train, cal, test) = (data.select(&groups[0]), data.select(&groups[1]), data.select(&groups[2]));
    let support = Support::from_responses(&train.responses).unwrap();
    let model = ModelSpec::knn().fit(&train.features, &train.responses, support).unwrap();
    let predictor = ChrPredictor::calibrate(model, &cal.features, &cal.responses, &ChrSettings::new(0.1, 50, 1)).unwrap();
    let intervals = predictor.predict_all(&test.features);
    assert!(intervals.iter().all(|(lo, hi)| lo <= hi));
    assert!(marginal_coverage(&intervals, &test.responses) > 0.75);

    let artifact = Artifact {
        predictor: Predictor::Split(predictor),
        feature_names: train.feature_names.clone(),
        target_name: train.target_name.clone(),
        run: serde_json::Value::Null,
    };
    let dir = tempfile::tempdir().unwrap();
    artifact.save(dir.path()).unwrap();
    let loaded = Artifact::load(dir.path()).unwrap();
    let again = loaded.predictor.predict_all(&test.features);
    assert!(intervals
        .iter()
        .zip(&again)
        .all(|(a, b)| a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits()));
}
