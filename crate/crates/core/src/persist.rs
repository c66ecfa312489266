//! Saved predictors: a JSON manifest next to a flat binary block.
//!
//! An artifact is a directory holding `manifest.json` and `weights.bin`. The
//! manifest carries the run configuration, seeds, partition edges, the
//! calibrated level and every small model parameter; the block holds the
//! bulky arrays (k-NN training data, linear coefficients) as little-endian
//! `f64`. Floats in the manifest are written in shortest round-trip form, so
//! a loaded predictor reproduces the saved one bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationResult, ChrPredictor};
use crate::cvplus::CvPlusPredictor;
use crate::data::{Features, Standardizer};
use crate::error::{ChrError, Result};
use crate::interval::Partition;
use crate::models::{FittedModel, Inner, KnnModel, LinearModel, Support};
use crate::sequence::SequenceConfig;
use crate::synthetic::SkewedLaw;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOCK_FILE: &str = "weights.bin";
const FORMAT: &str = "chr-predictor";
const MAGIC: &[u8; 4] = b"CHRW";
const HEADER_LEN: usize = 16;

/// A calibrated predictor of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Split(ChrPredictor),
    CvPlus(CvPlusPredictor),
}

impl Predictor {
    pub fn partition(&self) -> &Partition {
        match self {
            Self::Split(p) => &p.partition,
            Self::CvPlus(p) => &p.partition,
        }
    }

    pub fn bins(&self) -> usize {
        self.partition().bins()
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Self::Split(p) => p.calibration.alpha,
            Self::CvPlus(p) => p.alpha,
        }
    }

    pub fn predict_all(&self, features: &Features) -> Vec<(f64, f64)> {
        match self {
            Self::Split(p) => p.predict_all(features),
            Self::CvPlus(p) => p.predict_all(features),
        }
    }
}

/// A predictor plus the metadata needed to apply it to new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub predictor: Predictor,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Caller-defined run configuration, stored verbatim.
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub run: serde_json::Value,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub seed: u64,
    pub alpha: f64,
    pub bins: usize,
    pub partition_edges: Vec<f64>,
    pub sequence: SequenceConfig,
    /// Split calibration only.
    pub calibration: Option<CalibrationResult>,
    /// CV+ only.
    pub folds: Option<FoldManifest>,
    pub models: Vec<ModelManifest>,
    /// Number of `f64` values in the binary block.
    pub block_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold_of: Vec<usize>,
    pub fold_scores: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub support: Support,
    pub levels: Vec<f64>,
    pub body: ModelBody,
}

/// Model parameters; offsets index the binary block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelBody {
    Knn {
        k: usize,
        rows: usize,
        cols: usize,
        standardizer: Standardizer,
        train_offset: usize,
        responses_offset: usize,
    },
    Linear {
        standardizer: Standardizer,
        response_mean: f64,
        response_scale: f64,
        levels: Vec<f64>,
        /// Intercept plus one slope per feature.
        per_level: usize,
        offset: usize,
        converged: bool,
    },
    Oracle {
        law: SkewedLaw,
    },
}

fn model_manifest(model: &FittedModel, block: &mut Vec<f64>) -> ModelManifest {
    let body = match &model.inner {
        Inner::Knn(m) => {
            let train_offset = block.len();
            block.extend_from_slice(m.train.values());
            let responses_offset = block.len();
            block.extend_from_slice(&m.responses);
            ModelBody::Knn {
                k: m.k,
                rows: m.train.rows(),
                cols: m.train.cols(),
                standardizer: m.standardizer.clone(),
                train_offset,
                responses_offset,
            }
        }
        Inner::Linear(m) => {
            let offset = block.len();
            let per_level = m.coefficients.first().map_or(0, Vec::len);
            for beta in &m.coefficients {
                block.extend_from_slice(beta);
            }
            ModelBody::Linear {
                standardizer: m.standardizer.clone(),
                response_mean: m.response_mean,
                response_scale: m.response_scale,
                levels: m.levels.clone(),
                per_level,
                offset,
                converged: m.converged,
            }
        }
        Inner::Oracle(law) => ModelBody::Oracle { law: *law },
    };
    ModelManifest {
        support: model.support,
        levels: model.levels.clone(),
        body,
    }
}

fn slice(block: &[f64], offset: usize, len: usize) -> Result<&[f64]> {
    offset
        .checked_add(len)
        .and_then(|end| block.get(offset..end))
        .ok_or_else(|| ChrError::Schema(format!("block range {offset}+{len} exceeds {} values", block.len())))
}

fn restore_model(spec: &ModelManifest, block: &[f64]) -> Result<FittedModel> {
    let inner = match &spec.body {
        ModelBody::Knn {
            k,
            rows,
            cols,
            standardizer,
            train_offset,
            responses_offset,
        } => {
            if standardizer.mean.len() != *cols || *k == 0 || k > rows {
                return Err(ChrError::Schema("inconsistent neighbour model".into()));
            }
            let train = Features::new(slice(block, *train_offset, rows * cols)?.to_vec(), *cols)?;
            Inner::Knn(KnnModel {
                standardizer: standardizer.clone(),
                train,
                responses: slice(block, *responses_offset, *rows)?.to_vec(),
                k: *k,
            })
        }
        ModelBody::Linear {
            standardizer,
            response_mean,
            response_scale,
            levels,
            per_level,
            offset,
            converged,
        } => {
            if *per_level != standardizer.mean.len() + 1 {
                return Err(ChrError::Schema("inconsistent linear model".into()));
            }
            let values = slice(block, *offset, levels.len() * per_level)?;
            Inner::Linear(LinearModel {
                standardizer: standardizer.clone(),
                response_mean: *response_mean,
                response_scale: *response_scale,
                levels: levels.clone(),
                coefficients: values.chunks(*per_level).map(<[f64]>::to_vec).collect(),
                converged: *converged,
            })
        }
        ModelBody::Oracle { law } => {
            law.validate()?;
            Inner::Oracle(*law)
        }
    };
    Ok(FittedModel {
        support: spec.support,
        levels: spec.levels.clone(),
        inner,
    })
}

fn encode_block(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn decode_block(bytes: &[u8], expected_len: usize) -> Result<Vec<f64>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(ChrError::Schema("weights block has no valid header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SCHEMA_VERSION {
        return Err(ChrError::Schema(format!(
            "weights block version {version}, expected {SCHEMA_VERSION}"
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if count != expected_len || body.len() != 8 * count {
        return Err(ChrError::Schema(format!(
            "weights block holds {} bytes for {count} values, manifest expects {expected_len}",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Artifact {
    /// Splits the artifact into its manifest and binary block.
    pub fn to_parts(&self) -> (Manifest, Vec<f64>) {
        let mut block = Vec::new();
        let (seed, sequence, calibration, folds, models) = match &self.predictor {
            Predictor::Split(p) => (
                p.seed,
                p.sequence,
                Some(p.calibration),
                None,
                vec![model_manifest(&p.model, &mut block)],
            ),
            Predictor::CvPlus(p) => (
                p.seed,
                p.sequence,
                None,
                Some(FoldManifest {
                    fold_of: p.fold_of.clone(),
                    fold_scores: p.fold_scores.clone(),
                }),
                p.models.iter().map(|m| model_manifest(m, &mut block)).collect(),
            ),
        };
        let manifest = Manifest {
            format: FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            run: self.run.clone(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            seed,
            alpha: self.predictor.alpha(),
            bins: self.predictor.bins(),
            partition_edges: self.predictor.partition().edges().to_vec(),
            sequence,
            calibration,
            folds,
            models,
            block_len: block.len(),
        };
        (manifest, block)
    }

    pub fn from_parts(manifest: Manifest, block: &[f64]) -> Result<Self> {
        if manifest.format != FORMAT {
            return Err(ChrError::Schema(format!("unknown artifact format `{}`", manifest.format)));
        }
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(ChrError::Schema(format!(
                "artifact schema version {}, expected {SCHEMA_VERSION}",
                manifest.schema_version
            )));
        }
        if block.len() != manifest.block_len {
            return Err(ChrError::Schema("weights block length differs from manifest".into()));
        }
        let partition = Partition::new(manifest.partition_edges)?;
        if partition.bins() != manifest.bins {
            return Err(ChrError::Schema(format!(
                "manifest declares {} bins but lists {} edges",
                manifest.bins,
                partition.bins() + 1
            )));
        }
        let sequence = SequenceConfig::new(manifest.sequence.levels, manifest.sequence.start, manifest.sequence.randomize)?;
        let mut models = manifest
            .models
            .iter()
            .map(|m| restore_model(m, block))
            .collect::<Result<Vec<_>>>()?;
        let predictor = match (manifest.calibration, manifest.folds) {
            (Some(calibration), None) if models.len() == 1 => Predictor::Split(ChrPredictor {
                model: models.pop().expect("one model"),
                partition,
                sequence,
                calibration,
                seed: manifest.seed,
            }),
            (None, Some(folds)) if models.len() == folds.fold_scores.len() && models.len() >= 2 => {
                Predictor::CvPlus(CvPlusPredictor {
                    models,
                    fold_of: folds.fold_of,
                    fold_scores: folds.fold_scores,
                    partition,
                    sequence,
                    alpha: manifest.alpha,
                    seed: manifest.seed,
                })
            }
            _ => return Err(ChrError::Schema("manifest mixes split and cross-validated fields".into())),
        };
        Ok(Self {
            predictor,
            feature_names: manifest.feature_names,
            target_name: manifest.target_name,
            run: manifest.run,
        })
    }

    /// Writes `manifest.json` and `weights.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, block) = self.to_parts();
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(dir.join(BLOCK_FILE), encode_block(&block))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let block = decode_block(&fs::read(dir.join(BLOCK_FILE))?, manifest.block_len)?;
        Self::from_parts(manifest, &block)
    }

    /// Fails with a schema error when the saved bin count differs from the
    /// one the caller is configured for.
    pub fn check_bins(&self, expected: usize) -> Result<()> {
        let saved = self.predictor.bins();
        if saved == expected {
            Ok(())
        } else {
            Err(ChrError::Schema(format!(
                "predictor was fitted with {saved} bins, configuration asks for {expected}"
            )))
        }
    }

    /// Fails with a schema error unless the feature columns match by name and
    /// order.
    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names == self.feature_names.as_slice() {
            Ok(())
        } else {
            Err(ChrError::Schema(format!(
                "predictor expects features {:?}, got {:?}",
                self.feature_names, names
            )))
        }
    }
}
