//! Datasets: dense sample matrices, the LIBSVM text loader/writer and the
//! seeded synthetic generators.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, BufRead};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed LIBSVM line {0}")]
    MalformedLine(usize),
    #[error("line {line}: feature index {index} exceeds expected dimension {expected}")]
    DimensionExceeded { line: usize, index: usize, expected: usize },
    #[error("no samples parsed")]
    EmptyDataset,
    #[error("labels are not binary: found {0} distinct values")]
    NonBinaryLabels(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What the label column means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Regression,
    /// Labels in {0, 1}.
    Binary01,
    /// Labels in {-1, +1}.
    BinaryPm1,
}

/// Dense row-major sample matrix with one label per row.
///
/// Immutable once built; share it behind an `Arc` between runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    kind: LabelKind,
    n_features: usize,
}

impl Dataset {
    /// Builds a dataset from row-major `features` (`labels.len()` rows).
    pub fn new(features: Vec<f64>, labels: Vec<f64>, kind: LabelKind) -> Result<Self, DataError> {
        let n = labels.len();
        if n == 0 {
            return Err(DataError::EmptyDataset);
        }
        if features.is_empty() || !features.len().is_multiple_of(n) {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} non-empty rows",
                features.len(),
                n
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite feature at flat index {pos}")));
        }
        if let Some(pos) = labels.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite label at row {pos}")));
        }
        let allowed: Option<&[f64]> = match kind {
            LabelKind::Regression => None,
            LabelKind::Binary01 => Some(&[0.0, 1.0]),
            LabelKind::BinaryPm1 => Some(&[-1.0, 1.0]),
        };
        if let Some(allowed) = allowed {
            if let Some(pos) = labels.iter().position(|y| !allowed.contains(y)) {
                return Err(DataError::Invalid(format!(
                    "label {} at row {pos} not allowed for {kind:?}",
                    labels[pos]
                )));
            }
        }
        let n_features = features.len() / n;
        Ok(Self {
            features,
            labels,
            kind,
            n_features,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features;
        &self.features[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Keeps the first `n` rows.
    pub fn head(&self, n: usize) -> Result<Self, DataError> {
        let n = n.min(self.n_samples());
        Self::new(
            self.features[..n * self.n_features].to_vec(),
            self.labels[..n].to_vec(),
            self.kind,
        )
    }

    /// Appends a constant-1 column.
    pub fn with_intercept(&self) -> Self {
        let d = self.n_features;
        let mut features = Vec::with_capacity(self.n_samples() * (d + 1));
        for i in 0..self.n_samples() {
            features.extend_from_slice(self.row(i));
            features.push(1.0);
        }
        Self {
            features,
            labels: self.labels.clone(),
            kind: self.kind,
            n_features: d + 1,
        }
    }

    /// Per-column standardization to zero mean and unit variance. Constant
    /// columns are only centered.
    pub fn standardized(&self) -> Self {
        let (n, d) = (self.n_samples(), self.n_features);
        let mut features = self.features.clone();
        for j in 0..d {
            let mean = (0..n).map(|i| features[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (features[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                features[i * d + j] = (features[i * d + j] - mean) / scale;
            }
        }
        Self {
            features,
            labels: self.labels.clone(),
            kind: self.kind,
            n_features: d,
        }
    }

    /// Serializes to LIBSVM text. Zero entries are omitted; values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_samples() {
            let _ = write!(out, "{}", self.labels[i]);
            for (j, v) in self.row(i).iter().enumerate() {
                if *v != 0.0 {
                    let _ = write!(out, " {}:{}", j + 1, v);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// How raw LIBSVM labels are mapped onto the objective's convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelConvention {
    /// Keep labels as parsed.
    Raw,
    /// Binary labels mapped to {-1, +1}.
    PlusMinusOne,
    /// Binary labels mapped to {0, 1}.
    ZeroOne,
}

impl LabelConvention {
    pub fn kind(self) -> LabelKind {
        match self {
            LabelConvention::Raw => LabelKind::Regression,
            LabelConvention::PlusMinusOne => LabelKind::BinaryPm1,
            LabelConvention::ZeroOne => LabelKind::Binary01,
        }
    }
}

/// Remaps binary labels: the larger of the two distinct raw values becomes the
/// positive class. A single distinct value is positive iff it is > 0.
fn remap_labels(raw: &mut [f64], convention: LabelConvention) -> Result<(), DataError> {
    let (neg, pos) = match convention {
        LabelConvention::Raw => return Ok(()),
        LabelConvention::PlusMinusOne => (-1.0, 1.0),
        LabelConvention::ZeroOne => (0.0, 1.0),
    };
    let distinct: BTreeSet<u64> = raw.iter().map(|y| y.to_bits()).collect();
    let values: Vec<f64> = distinct.iter().map(|b| f64::from_bits(*b)).collect();
    let positive_threshold = match values.len() {
        1 => 0.0,
        2 => values[0].min(values[1]),
        k => return Err(DataError::NonBinaryLabels(k)),
    };
    for y in raw.iter_mut() {
        *y = if *y > positive_threshold { pos } else { neg };
    }
    Ok(())
}

/// Parses LIBSVM text (`label idx:val ...`, 1-based strictly increasing
/// indices). Blank lines and `#` comments are skipped. The dimension is the
/// largest index seen unless `expected_dim` is given.
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    expected_dim: Option<usize>,
    convention: LabelConvention,
) -> Result<Dataset, DataError> {
    let mut labels = Vec::new();
    let mut sparse_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok.parse().map_err(|_| DataError::MalformedLine(line_no))?;
        if !label.is_finite() {
            return Err(DataError::MalformedLine(line_no));
        }
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or(DataError::MalformedLine(line_no))?;
            let idx: usize = idx.parse().map_err(|_| DataError::MalformedLine(line_no))?;
            let val: f64 = val.parse().map_err(|_| DataError::MalformedLine(line_no))?;
            if idx == 0 || idx <= last || !val.is_finite() {
                return Err(DataError::MalformedLine(line_no));
            }
            if let Some(expected) = expected_dim {
                if idx > expected {
                    return Err(DataError::DimensionExceeded {
                        line: line_no,
                        index: idx,
                        expected,
                    });
                }
            }
            last = idx;
            row.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        labels.push(label);
        sparse_rows.push(row);
    }

    if labels.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let d = expected_dim.unwrap_or(max_index).max(1);
    let mut features = vec![0.0; labels.len() * d];
    for (i, row) in sparse_rows.iter().enumerate() {
        for &(j, v) in row {
            features[i * d + j] = v;
        }
    }
    remap_labels(&mut labels, convention)?;
    Dataset::new(features, labels, convention.kind())
}

/// Parameters of the seeded linear-regression generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_features: 20,
            noise_std: 4.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_samples == 0 || self.n_features == 0 {
            return Err(DataError::Invalid("n_samples and n_features must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::Invalid(format!(
                "noise_std {} must be finite and >= 0",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Draws `a_i ~ N(0, I)`, `w* ~ N(0, I)` and `b_i = a_i^T w* + xi_i` with
/// `xi_i ~ N(0, noise_std^2)`. Returns the dataset and `w*`.
///
/// The generator is ChaCha8 seeded from `spec.seed`; draw order is `w*`,
/// then rows, then noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<f64>), DataError> {
    spec.validate()?;
    let (n, d) = (spec.n_samples, spec.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w_star: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let features: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let labels: Vec<f64> = (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            dot(&features[i * d..(i + 1) * d], &w_star) + spec.noise_std * z
        })
        .collect();
    Ok((Dataset::new(features, labels, LabelKind::Regression)?, w_star))
}

/// Binary classification variant of [`generate_synthetic`]: the regression
/// target is thresholded at zero and mapped to `convention`.
pub fn generate_synthetic_classification(
    spec: &SyntheticSpec,
    convention: LabelConvention,
) -> Result<(Dataset, Vec<f64>), DataError> {
    let (data, w_star) = generate_synthetic(spec)?;
    let (neg, pos) = match convention {
        LabelConvention::Raw => return Ok((data, w_star)),
        LabelConvention::PlusMinusOne => (-1.0, 1.0),
        LabelConvention::ZeroOne => (0.0, 1.0),
    };
    let labels = data.labels().iter().map(|b| if *b > 0.0 { pos } else { neg }).collect();
    Ok((
        Dataset::new(data.features().to_vec(), labels, convention.kind())?,
        w_star,
    ))
}

/// Category counts of the one-hot groups in [`generate_categorical_binary`];
/// they sum to 123, the width of the UCI Adult encoding.
pub const CATEGORICAL_GROUPS: [usize; 14] = [5, 8, 16, 7, 14, 6, 5, 2, 14, 5, 5, 3, 9, 24];

/// Seeded binary dataset with one-hot categorical features: each row picks one
/// category per group of [`CATEGORICAL_GROUPS`] (skewed towards low category
/// ids), and labels come from a logistic model with standard normal weights.
pub fn generate_categorical_binary(
    n_samples: usize,
    seed: u64,
    convention: LabelConvention,
) -> Result<Dataset, DataError> {
    if n_samples == 0 {
        return Err(DataError::EmptyDataset);
    }
    let d: usize = CATEGORICAL_GROUPS.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = vec![0.0; n_samples * d];
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let row = &mut features[i * d..(i + 1) * d];
        let mut offset = 0;
        for &size in CATEGORICAL_GROUPS.iter() {
            let u: f64 = rng.random();
            let cat = ((u * u) * size as f64) as usize;
            row[offset + cat.min(size - 1)] = 1.0;
            offset += size;
        }
        let z = dot(row, &weights);
        let p = 1.0 / (1.0 + (-z).exp());
        let positive = rng.random::<f64>() < p;
        labels.push(match (convention, positive) {
            (LabelConvention::ZeroOne, true) | (LabelConvention::Raw, true) => 1.0,
            (LabelConvention::ZeroOne, false) | (LabelConvention::Raw, false) => 0.0,
            (LabelConvention::PlusMinusOne, true) => 1.0,
            (LabelConvention::PlusMinusOne, false) => -1.0,
        });
    }
    Dataset::new(features, labels, convention.kind())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
