//! Labeled datasets, client sharding and client metadata encoding.

mod idx;
mod onehot;
mod partition;

pub use idx::{encode_idx, load_idx, load_idx_bytes, parse_idx, write_idx, IdxTensor};
pub use onehot::{encode_one_hot, Codebook, OneHotCodec};
pub use partition::{partition_random, ClientShard};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cannot encode attribute `{attribute}`: {message}")]
    Encoding { attribute: String, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset from a flat row-major feature buffer.
    pub fn from_flat(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(DatasetError::Invalid("n_classes must be positive".into()));
        }
        if dim == 0 {
            return Err(DatasetError::Invalid(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != dim * labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} feature values do not form {} rows of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DatasetError::Invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            dim,
            labels,
            n_classes,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DatasetError::Invalid(
                "feature rows differ in dimension".into(),
            ));
        }
        Self::from_flat(rows.concat(), dim, labels, n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Seeded random split into `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(DatasetError::Precondition(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = order.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }
}

/// Per-class Gaussian blobs spread by this factor relative to unit noise.
const CLASS_MEAN_SCALE: f64 = 1.25;

/// Gaussian class blobs with distinct random means, min-max scaled to [0, 1].
///
/// Labels are balanced (round robin) and then shuffled, so contiguous index
/// ranges hold a mix of classes.
pub fn make_synthetic(n: usize, dim: usize, n_classes: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || dim == 0 || n_classes == 0 {
        return Err(DatasetError::Precondition(format!(
            "n ({n}), dim ({dim}) and n_classes ({n_classes}) must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..dim)
                .map(|_| CLASS_MEAN_SCALE * unit.sample(&mut rng))
                .collect()
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * dim);
    for &label in &labels {
        for mean in &means[label] {
            features.push(mean + unit.sample(&mut rng));
        }
    }
    min_max_scale(&mut features, dim);
    LabeledDataset::from_flat(features, dim, labels, n_classes)
}

/// Scales every column independently into [0, 1]; constant columns become 0.
fn min_max_scale(features: &mut [f64], dim: usize) {
    for col in 0..dim {
        let column = features.iter().skip(col).step_by(dim);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for v in features.iter_mut().skip(col).step_by(dim) {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}

/// Loads a CSV file with a header row whose last column is the integer label.
/// Feature columns are min-max scaled into [0, 1].
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let n_cols = reader.headers()?.len();
    if n_cols < 2 {
        return Err(DatasetError::Invalid(
            "csv needs at least one feature column and a label column".into(),
        ));
    }
    let dim = n_cols - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for field in record.iter().take(dim) {
            let value: f64 = field.trim().parse().map_err(|_| {
                DatasetError::Invalid(format!("row {}: `{field}` is not a number", line + 1))
            })?;
            features.push(value);
        }
        let label = record.get(dim).unwrap_or_default().trim();
        labels.push(label.parse::<usize>().map_err(|_| {
            DatasetError::Invalid(format!(
                "row {}: label `{label}` is not a class index",
                line + 1
            ))
        })?);
    }
    if labels.is_empty() {
        return Err(DatasetError::Invalid("csv has no data rows".into()));
    }
    min_max_scale(&mut features, dim);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::from_flat(features, dim, labels, n_classes)
}
