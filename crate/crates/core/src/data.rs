//! Synthetic data generation and a labeled-CSV loader.
//!
//! Norm populations feed the estimation experiments; Gaussian blobs give a
//! desk-scale classification task for end-to-end training runs. Everything
//! is a pure function of its parameters and seed.

use crate::models::Example;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}, column '{column}': {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },
}

/// Distribution a norm population is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case", tag = "dist")]
pub enum NormDistribution {
    Gaussian { mean: f64, std: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Constant { value: f64 },
}

/// A generated set of non-negative norms plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormPopulation {
    pub values: Vec<f64>,
    pub dist: NormDistribution,
    pub seed: u64,
}

/// Draw `n` i.i.d. norms; negative Gaussian draws are re-drawn rather than
/// truncated so the population has no atom at zero.
pub fn gen_norms(dist: NormDistribution, n: usize, seed: u64) -> Result<NormPopulation, DataError> {
    if n == 0 {
        return Err(DataError::InvalidParams("need at least one draw".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    match dist {
        NormDistribution::Constant { value } => {
            if !value.is_finite() || value < 0.0 {
                return Err(DataError::InvalidParams(format!(
                    "constant norm must be non-negative, got {value}"
                )));
            }
            values.resize(n, value);
        }
        NormDistribution::Gaussian { mean, std } => {
            if !std.is_finite() || std < 0.0 {
                return Err(DataError::InvalidParams(format!(
                    "standard deviation must be non-negative, got {std}"
                )));
            }
            if std == 0.0 && mean < 0.0 {
                return Err(DataError::InvalidParams(
                    "degenerate Gaussian with negative mean has no non-negative draws".into(),
                ));
            }
            let normal =
                Normal::new(mean, std).map_err(|e| DataError::InvalidParams(e.to_string()))?;
            for _ in 0..n {
                let mut tries = 0;
                let v = loop {
                    let v = normal.sample(&mut rng);
                    if v >= 0.0 {
                        break v;
                    }
                    tries += 1;
                    if tries > 10_000 {
                        return Err(DataError::InvalidParams(format!(
                            "Gaussian({mean}, {std}) produced 10000 consecutive negative draws"
                        )));
                    }
                };
                values.push(v);
            }
        }
        NormDistribution::LogNormal { mu, sigma } => {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(DataError::InvalidParams(format!(
                    "log-sigma must be non-negative, got {sigma}"
                )));
            }
            let normal =
                Normal::new(mu, sigma).map_err(|e| DataError::InvalidParams(e.to_string()))?;
            for _ in 0..n {
                values.push(normal.sample(&mut rng).exp());
            }
        }
    }
    Ok(NormPopulation { values, dist, seed })
}

/// A labeled dataset with a fixed train/test split.
///
/// Split indices are disjoint, exhaustive, and refer into `examples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub classes: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Dataset {
    pub fn train_examples(&self) -> impl Iterator<Item = &Example> {
        self.train_idx.iter().map(|&i| &self.examples[i])
    }

    pub fn test_examples(&self) -> impl Iterator<Item = &Example> {
        self.test_idx.iter().map(|&i| &self.examples[i])
    }

    /// Contiguous 80/20 split over the examples as ordered.
    fn contiguous_split(n: usize) -> (Vec<usize>, Vec<usize>) {
        let cut = (n as f64 * 0.8).floor() as usize;
        ((0..cut).collect(), (cut..n).collect())
    }
}

/// `classes` Gaussian unit-variance clusters with centers `separation`
/// apart, shuffled and split 80/20. Cluster k sits at separation/sqrt(2)
/// along axis k, which keeps every pairwise center distance equal.
pub fn gen_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::InvalidParams(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if n < classes {
        return Err(DataError::InvalidParams(format!(
            "need at least one example per class: n = {n}, classes = {classes}"
        )));
    }
    if dim < classes {
        return Err(DataError::InvalidParams(format!(
            "equidistant centers need dim >= classes: dim = {dim}, classes = {classes}"
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(DataError::InvalidParams(format!(
            "separation must be non-negative, got {separation}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let offset = separation / 2.0f64.sqrt();
    let mut examples: Vec<Example> = (0..n)
        .map(|i| {
            let label = i % classes;
            let features = (0..dim)
                .map(|j| {
                    let center = if j == label { offset } else { 0.0 };
                    center + rng.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            Example { features, label }
        })
        .collect();
    examples.shuffle(&mut rng);
    let (train_idx, test_idx) = Dataset::contiguous_split(n);
    Ok(Dataset {
        examples,
        classes,
        train_idx,
        test_idx,
    })
}

/// Load a numeric CSV with a header row; every column except the label
/// column becomes a feature. Labels must be non-negative integers. When
/// `standardize` is set each feature column is shifted and scaled to zero
/// mean and unit variance (constant columns are left centered).
pub fn load_csv(path: &Path, label_column: &str, standardize: bool) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;

    let mut examples = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header line
        let mut features = Vec::with_capacity(headers.len().saturating_sub(1));
        let mut label = 0usize;
        for (col, cell) in record.iter().enumerate() {
            let column = headers.get(col).unwrap_or("?").to_string();
            if col == label_pos {
                label = cell
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| DataError::BadCell {
                        row,
                        column,
                        message: format!("expected a non-negative integer label, got '{cell}'"),
                    })?;
            } else {
                let value = cell.trim().parse::<f64>().map_err(|_| DataError::BadCell {
                    row,
                    column,
                    message: format!("expected a real number, got '{cell}'"),
                })?;
                features.push(value);
            }
        }
        examples.push(Example { features, label });
    }
    if examples.is_empty() {
        return Err(DataError::InvalidParams("csv contains no data rows".into()));
    }
    let classes = examples.iter().map(|e| e.label).max().unwrap() + 1;
    if classes < 2 {
        return Err(DataError::InvalidParams(
            "csv labels describe fewer than 2 classes".into(),
        ));
    }

    if standardize {
        let dim = examples[0].features.len();
        let n = examples.len() as f64;
        for j in 0..dim {
            let mean = examples.iter().map(|e| e.features[j]).sum::<f64>() / n;
            let var = examples
                .iter()
                .map(|e| (e.features[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            for e in &mut examples {
                e.features[j] = (e.features[j] - mean) / scale;
            }
        }
    }

    let n = examples.len();
    let (train_idx, test_idx) = Dataset::contiguous_split(n);
    Ok(Dataset {
        examples,
        classes,
        train_idx,
        test_idx,
    })
}

/// Write a dataset as CSV with feature columns `f0..fk` and a `label`
/// column. Values use the shortest representation that parses back to the
/// same float, so a save/load round trip is lossless.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let dim = dataset
        .examples
        .first()
        .map(|e| e.features.len())
        .unwrap_or(0);
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for ex in &dataset.examples {
        let mut record: Vec<String> = ex.features.iter().map(|v| format!("{v}")).collect();
        record.push(ex.label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
