//! Repeated train/calibrate/test runs comparing interval methods.
//!
//! Each repetition draws fresh data (or a fresh random split of a table),
//! fits one base model on the training part, calibrates every requested
//! method and scores it on the test part. Repetitions run in parallel with
//! seeds derived from the run seed and are reduced in repetition order.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cqr, dcp, dcp_cqr, distsplit};
use crate::calibration::{ChrPredictor, ChrSettings};
use crate::cvplus::CvPlusPredictor;
use crate::data::{split_indices, Dataset, Features};
use crate::error::{ChrError, Result};
use crate::metrics::{covered, marginal_coverage, mean_width, worst_slab_coverage, WscSettings};
use crate::models::{ModelSpec, Support};
use crate::synthetic::{generate_synthetic, SkewedLaw, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Chr,
    ChrCvplus,
    Cqr,
    Dcp,
    Distsplit,
    DcpCqr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Chr,
        Method::ChrCvplus,
        Method::Cqr,
        Method::Dcp,
        Method::Distsplit,
        Method::DcpCqr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Chr => "chr",
            Method::ChrCvplus => "chr-cvplus",
            Method::Cqr => "cqr",
            Method::Dcp => "dcp",
            Method::Distsplit => "distsplit",
            Method::DcpCqr => "dcp-cqr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ChrError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ChrError::Config(format!("unknown method `{s}`")))
    }
}

/// Where repetitions get their data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Fresh draws per repetition.
    Synthetic { law: SkewedLaw, noise_features: usize },
    /// Random train/calibration/test splits of a fixed table.
    Table(Dataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub model: ModelSpec,
    pub alpha: f64,
    pub repetitions: usize,
    /// Sample sizes for synthetic data.
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    /// Train/calibration/test fractions for table data.
    pub split: [f64; 3],
    pub bins: usize,
    /// Resolution `T`; defaults to the calibration size.
    pub levels: Option<usize>,
    pub randomize: bool,
    /// CV+ fold count.
    pub folds: usize,
    pub seed: u64,
    /// Worst-slab directions; 0 skips the metric.
    pub wsc_directions: usize,
    pub wsc_delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Chr],
            model: ModelSpec::knn(),
            alpha: 0.1,
            repetitions: 10,
            n_train: 1000,
            n_cal: 1000,
            n_test: 1000,
            split: [0.4, 0.4, 0.2],
            bins: 100,
            levels: None,
            randomize: true,
            folds: 10,
            seed: 0,
            wsc_directions: 1000,
            wsc_delta: 0.1,
        }
    }
}

/// Metrics of one method on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub seed: u64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub coverage: f64,
    pub wsc: Option<f64>,
    pub width: f64,
    /// Mean width of the true shortest intervals on the test points, when
    /// the data law is known.
    pub oracle_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub repetitions: usize,
    pub coverage: MeanSe,
    pub wsc: Option<MeanSe>,
    pub width: MeanSe,
    pub oracle_width: Option<MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub source: String,
    pub records: Vec<RepRecord>,
    pub summary: Vec<MethodSummary>,
}

/// SplitMix64 finalizer; spreads `(seed, stream)` into independent seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct RepData {
    train: Dataset,
    cal: Dataset,
    test: Dataset,
}

fn draw(cfg: &ExperimentConfig, source: &DataSource, seed: u64) -> Result<RepData> {
    match source {
        DataSource::Synthetic { law, noise_features } => {
            let all = generate_synthetic(&SyntheticConfig {
                n_samples: cfg.n_train + cfg.n_cal + cfg.n_test,
                law: *law,
                noise_features: *noise_features,
                seed,
            })?;
            // calibration last, so that runs differing only in n_cal share
            // their training and test samples and nest their calibration sets
            let idx: Vec<usize> = (0..all.len()).collect();
            let (train, rest) = idx.split_at(cfg.n_train);
            let (test, cal) = rest.split_at(cfg.n_test);
            Ok(RepData {
                train: all.select(train),
                cal: all.select(cal),
                test: all.select(test),
            })
        }
        DataSource::Table(data) => {
            let groups = split_indices(data.len(), &cfg.split, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Ok(RepData {
                train: data.select(&groups[0]),
                cal: data.select(&groups[1]),
                test: data.select(&groups[2]),
            })
        }
    }
}

fn concat(a: &Dataset, b: &Dataset) -> Dataset {
    let mut values = a.features.values().to_vec();
    values.extend_from_slice(b.features.values());
    let mut responses = a.responses.clone();
    responses.extend_from_slice(&b.responses);
    Dataset {
        features: Features::new(values, a.features.cols()).expect("same width"),
        responses,
        feature_names: a.feature_names.clone(),
        target_name: a.target_name.clone(),
    }
}

fn validate(cfg: &ExperimentConfig, source: &DataSource) -> Result<()> {
    crate::calibration::check_alpha(cfg.alpha)?;
    if cfg.methods.is_empty() || cfg.repetitions == 0 || cfg.bins == 0 {
        return Err(ChrError::Config("need at least one method, repetition and bin".into()));
    }
    if let DataSource::Synthetic { .. } = source {
        if cfg.n_train == 0 || cfg.n_cal == 0 || cfg.n_test == 0 {
            return Err(ChrError::Config("sample sizes must be positive".into()));
        }
    }
    if matches!(source, DataSource::Table(_)) && cfg.model.kind == crate::models::ModelKind::Oracle {
        return Err(ChrError::UnsupportedGenerator);
    }
    Ok(())
}

fn run_rep(cfg: &ExperimentConfig, source: &DataSource, rep: usize, oracle_base: Option<(f64, SkewedLaw)>) -> Result<Vec<RepRecord>> {
    let seed = derive_seed(cfg.seed, rep as u64);
    let RepData { train, cal, test } = draw(cfg, source, seed)?;
    let support = Support::from_responses(&train.responses)?;
    let model = cfg.model.fit(&train.features, &train.responses, support)?;
    let settings = ChrSettings {
        alpha: cfg.alpha,
        bins: cfg.bins,
        levels: cfg.levels,
        start: None,
        randomize: cfg.randomize,
        seed: derive_seed(seed, 1),
    };
    let oracle_width = oracle_base.map(|(width, law)| {
        test.features.iter().map(|x| width * law.scale(x[0])).sum::<f64>() / test.len() as f64
    });
    let mut records = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let intervals = match method {
            Method::Chr => ChrPredictor::calibrate(model.clone(), &cal.features, &cal.responses, &settings)?
                .predict_all(&test.features),
            Method::ChrCvplus => {
                let pooled = concat(&train, &cal);
                CvPlusPredictor::fit(&cfg.model, &pooled.features, &pooled.responses, cfg.folds, &settings)?
                    .predict_all(&test.features)
            }
            Method::Cqr => cqr(&model, &cal.features, &cal.responses, &test.features, cfg.alpha)?.intervals,
            Method::Dcp => dcp(&model, &cal.features, &cal.responses, &test.features, cfg.alpha)?.intervals,
            Method::Distsplit => distsplit(&model, &cal.features, &cal.responses, &test.features, cfg.alpha)?.intervals,
            Method::DcpCqr => dcp_cqr(&model, &cal.features, &cal.responses, &test.features, cfg.alpha)?.intervals,
        };
        let wsc = if cfg.wsc_directions > 0 {
            let flags = covered(&intervals, &test.responses);
            let wsc_settings = WscSettings {
                delta: cfg.wsc_delta,
                directions: cfg.wsc_directions,
                seed: derive_seed(seed, 2),
                ..WscSettings::default()
            };
            Some(worst_slab_coverage(&test.features, &flags, &wsc_settings)?)
        } else {
            None
        };
        records.push(RepRecord {
            rep,
            method,
            seed,
            n_train: train.len(),
            n_cal: cal.len(),
            n_test: test.len(),
            coverage: marginal_coverage(&intervals, &test.responses),
            wsc,
            width: mean_width(&intervals),
            oracle_width,
        });
    }
    Ok(records)
}

/// Summary per method, in the order the methods were requested.
pub fn summarize(methods: &[Method], records: &[RepRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let rows: Vec<&RepRecord> = records.iter().filter(|r| r.method == method).collect();
            let column = |f: &dyn Fn(&RepRecord) -> Option<f64>| -> Option<MeanSe> {
                let values: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
                values.filter(|v| !v.is_empty()).map(|v| MeanSe::of(&v))
            };
            MethodSummary {
                method,
                repetitions: rows.len(),
                coverage: column(&|r| Some(r.coverage)).expect("at least one repetition"),
                wsc: column(&|r| r.wsc),
                width: column(&|r| Some(r.width)).expect("at least one repetition"),
                oracle_width: column(&|r| r.oracle_width),
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig, source: &DataSource) -> Result<ExperimentReport> {
    validate(cfg, source)?;
    let oracle_base = match source {
        DataSource::Synthetic { law, .. } => {
            let (lo, hi) = law.standard_oracle_interval(cfg.alpha);
            Some((hi - lo, *law))
        }
        DataSource::Table(_) => None,
    };
    let per_rep: Vec<Vec<RepRecord>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_rep(cfg, source, rep, oracle_base))
        .collect::<Result<_>>()?;
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let summary = summarize(&cfg.methods, &records);
    let source = match source {
        DataSource::Synthetic { law, noise_features } => {
            format!(
                "synthetic(law={}, noise_features={noise_features})",
                serde_json::to_string(law).expect("plain struct")
            )
        }
        DataSource::Table(data) => format!("table({} rows, target {})", data.len(), data.target_name),
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        source,
        records,
        summary,
    })
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ExperimentReport {
    /// One row per repetition and method, preceded by a `#` line holding the
    /// full configuration and data source as JSON.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = serde_json::json!({ "config": &self.config, "source": &self.source });
        writeln!(file, "# {header}")?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record([
            "rep", "method", "seed", "n_train", "n_cal", "n_test", "coverage", "wsc", "width", "oracle_width",
        ])?;
        for r in &self.records {
            writer.write_record([
                r.rep.to_string(),
                r.method.to_string(),
                r.seed.to_string(),
                r.n_train.to_string(),
                r.n_cal.to_string(),
                r.n_test.to_string(),
                r.coverage.to_string(),
                optional(r.wsc),
                r.width.to_string(),
                optional(r.oracle_width),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}
