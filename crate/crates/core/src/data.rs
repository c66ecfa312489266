//! Feature matrices, datasets, CSV ingestion and random splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChrError, Result};

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    values: Vec<f64>,
    cols: usize,
}

impl Features {
    pub fn new(values: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 || !values.len().is_multiple_of(cols) {
            return Err(ChrError::Schema(format!(
                "{} values do not fill rows of {cols} columns",
                values.len()
            )));
        }
        Ok(Self { values, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ChrError::Schema("ragged feature rows".into()));
        }
        Self::new(rows.concat(), cols)
    }

    /// One feature per row.
    pub fn column(values: Vec<f64>) -> Self {
        Self { values, cols: 1 }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            cols: self.cols,
        }
    }
}

/// Features with a response per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Features,
    pub responses: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(features: Features, responses: Vec<f64>) -> Result<Self> {
        if features.rows() != responses.len() {
            return Err(ChrError::Schema(format!(
                "{} feature rows for {} responses",
                features.rows(),
                responses.len()
            )));
        }
        let feature_names = (1..=features.cols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            features,
            responses,
            feature_names,
            target_name: "y".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(indices),
            responses: indices.iter().map(|&i| self.responses[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    /// Writes a header row followed by one row per sample, target last.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        writer.write_record(&header)?;
        for (row, y) in self.features.iter().zip(&self.responses) {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(y.to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Reads a headed CSV file. Every column other than `target` becomes a
/// feature; all cells must parse as finite numbers.
pub fn ingest_csv(path: &Path, target: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.iter().all(String::is_empty) {
        return Err(ChrError::EmptyFile);
    }
    let target_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| ChrError::MissingTarget(target.to_owned()))?;
    let mut values = Vec::new();
    let mut responses = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        for (j, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let value = parsed.ok_or_else(|| ChrError::NonNumericCell {
                row,
                column: headers[j].clone(),
                value: cell.to_owned(),
            })?;
            if j == target_col {
                responses.push(value);
            } else {
                values.push(value);
            }
        }
    }
    if responses.is_empty() {
        return Err(ChrError::EmptyFile);
    }
    let cols = headers.len() - 1;
    if cols == 0 {
        return Err(ChrError::Schema("no feature columns besides the target".into()));
    }
    let feature_names = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        features: Features::new(values, cols)?,
        responses,
        feature_names,
        target_name: target.to_owned(),
    })
}

/// Reads the named feature columns, in the given order, from a headed CSV
/// file, together with the `target` column when the file has one. Other
/// columns are ignored.
pub fn read_feature_columns(path: &Path, names: &[String], target: &str) -> Result<(Features, Option<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.iter().all(String::is_empty) {
        return Err(ChrError::EmptyFile);
    }
    let columns: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ChrError::Schema(format!("feature column `{name}` not found")))
        })
        .collect::<Result<_>>()?;
    let target_col = headers.iter().position(|h| h == target);
    let mut values = Vec::new();
    let mut responses = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let cell = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ChrError::NonNumericCell {
                    row,
                    column: headers[j].clone(),
                    value: raw.to_owned(),
                })
        };
        for &j in &columns {
            values.push(cell(j)?);
        }
        if let Some(j) = target_col {
            responses.push(cell(j)?);
        }
    }
    if values.is_empty() {
        return Err(ChrError::EmptyFile);
    }
    Ok((Features::new(values, names.len())?, target_col.map(|_| responses)))
}

/// Per-column centering and scaling fitted on one sample and applied to
/// others unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get scale 1.
    pub fn fit(features: &Features) -> Self {
        let (n, d) = (features.rows(), features.cols());
        let mut mean = vec![0.0; d];
        for row in features.iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for row in features.iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, features: &Features) -> Features {
        let values = features.iter().flat_map(|row| self.apply(row)).collect();
        Features::new(values, features.cols()).expect("same shape")
    }
}

/// Shuffles `0..n` and cuts it into consecutive groups with the given
/// fractions; the last group takes the rounding remainder.
pub fn split_indices<R: Rng + ?Sized>(n: usize, fractions: &[f64], rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| *f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(ChrError::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut groups = Vec::with_capacity(fractions.len());
    let mut start = 0;
    let mut acc = 0.0;
    for (g, f) in fractions.iter().enumerate() {
        acc += f;
        let end = if g + 1 == fractions.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).clamp(start, n)
        };
        groups.push(order[start..end].to_vec());
        start = end;
    }
    Ok(groups)
}
