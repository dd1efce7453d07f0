//! Per-sample losses over a [`Dataset`]: least squares, logistic regression
//! and the sigmoid non-linear least squares loss.
//!
//! Every per-sample gradient has the form `c_i(w) * x_i`, so the gradient
//! code computes one scalar coefficient per sample and scales the row.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspace::{dot, Dataset, LabelKind};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("sample index {index} out of range for {n_samples} samples")]
    IndexOutOfRange { index: usize, n_samples: usize },
    #[error("weight vector has dimension {got}, dataset has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{objective:?} objective needs {expected:?} labels, dataset has {got:?}")]
    IncompatibleLabels {
        objective: ObjectiveKind,
        expected: LabelKind,
        got: LabelKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    LeastSquares,
    Logistic,
    Nllsq,
}

impl ObjectiveKind {
    pub fn label_kind(self) -> LabelKind {
        match self {
            ObjectiveKind::LeastSquares => LabelKind::Regression,
            ObjectiveKind::Logistic => LabelKind::BinaryPm1,
            ObjectiveKind::Nllsq => LabelKind::Binary01,
        }
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, ObjectiveKind::Nllsq)
    }

    /// Upper bound on the second derivative of the per-sample loss with
    /// respect to the margin `x^T w`.
    fn curvature_bound(self) -> f64 {
        match self {
            ObjectiveKind::LeastSquares => 1.0,
            ObjectiveKind::Logistic => 0.25,
            // sup_z |d^2/dz^2 (y - sigmoid(z))^2| = 0.15406, y in {0, 1}
            ObjectiveKind::Nllsq => 0.155,
        }
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// A minimizer and the minimal value of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub weights: Vec<f64>,
    pub value: f64,
}

/// Per-sample gradients over a batch together with the statistics the
/// approximated batch tests consume.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGradients {
    dim: usize,
    /// Row-major `|S| x d` matrix of `grad f_i(w)`.
    pub rows: Vec<f64>,
    /// `grad f_S(w)`, the arithmetic mean of the rows.
    pub mean: Vec<f64>,
    pub mean_norm_sq: f64,
    /// `sum_i ||g_i - g_S||^2`
    pub sum_sq_dev_total: f64,
    /// `sum_i (g_i^T g_S - ||g_S||^2)^2`
    pub sum_sq_dev_inner: f64,
    /// `sum_i ||g_i - (g_i^T g_S / ||g_S||^2) g_S||^2`; zero when `d = 1` or
    /// `g_S = 0`.
    pub sum_sq_dev_orth: f64,
}

impl PerSampleGradients {
    /// Builds the statistics from row-major per-sample gradients. Reductions
    /// run sequentially in row order.
    pub fn from_rows(rows: Vec<f64>, dim: usize) -> Result<Self, ObjectiveError> {
        if dim == 0 || rows.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        if !rows.len().is_multiple_of(dim) {
            return Err(ObjectiveError::DimensionMismatch {
                got: rows.len() % dim,
                expected: dim,
            });
        }
        let n = rows.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, g) in mean.iter_mut().zip(row) {
                *m += g;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mean_norm_sq = dot(&mean, &mean);

        let mut sum_sq_dev_total = 0.0;
        let mut sum_sq_dev_inner = 0.0;
        let mut sum_sq_dev_orth = 0.0;
        for row in rows.chunks_exact(dim) {
            sum_sq_dev_total += row.iter().zip(&mean).map(|(g, m)| (g - m).powi(2)).sum::<f64>();
            let inner = dot(row, &mean);
            sum_sq_dev_inner += (inner - mean_norm_sq).powi(2);
            // no orthogonal complement in one dimension
            if dim > 1 {
                let coef = if mean_norm_sq > 0.0 { inner / mean_norm_sq } else { 0.0 };
                sum_sq_dev_orth += row.iter().zip(&mean).map(|(g, m)| (g - coef * m).powi(2)).sum::<f64>();
            }
        }
        Ok(Self {
            dim,
            rows,
            mean,
            mean_norm_sq,
            sum_sq_dev_total,
            sum_sq_dev_inner,
            sum_sq_dev_orth,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn mean_norm(&self) -> f64 {
        self.mean_norm_sq.sqrt()
    }

    /// Multiplies every per-sample gradient by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self, ObjectiveError> {
        Self::from_rows(self.rows.iter().map(|g| g * c).collect(), self.dim)
    }
}

/// Full-dataset gradient statistics used by the exact norm test.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSpread {
    pub gradient: Vec<f64>,
    pub norm_sq: f64,
    /// `sum_i ||grad f_i(w) - grad f(w)||^2` over all samples.
    pub sum_sq_dev: f64,
    pub n_samples: usize,
}

impl GradientSpread {
    /// Bessel-corrected variance `sum_sq_dev / (N - 1)` (zero when `N = 1`).
    pub fn sample_variance(&self) -> f64 {
        if self.n_samples > 1 {
            self.sum_sq_dev / (self.n_samples - 1) as f64
        } else {
            0.0
        }
    }
}

/// One of the three losses bound to a dataset.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    data: Arc<Dataset>,
    known_optimum: Option<KnownOptimum>,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, data: Arc<Dataset>) -> Result<Self, ObjectiveError> {
        let expected = kind.label_kind();
        if data.kind() != expected {
            return Err(ObjectiveError::IncompatibleLabels {
                objective: kind,
                expected,
                got: data.kind(),
            });
        }
        Ok(Self {
            kind,
            data,
            known_optimum: None,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.n_features()
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_samples()
    }

    pub fn known_optimum(&self) -> Option<&KnownOptimum> {
        self.known_optimum.as_ref()
    }

    pub fn set_known_optimum(&mut self, optimum: KnownOptimum) {
        self.known_optimum = Some(optimum);
    }

    /// Computes and caches the reference optimum: normal equations for least
    /// squares, damped Newton for logistic regression. NLLSQ has none.
    pub fn with_known_optimum(mut self) -> Self {
        self.known_optimum = match self.kind {
            ObjectiveKind::LeastSquares => Some(self.least_squares_optimum()),
            ObjectiveKind::Logistic => Some(self.logistic_optimum()),
            ObjectiveKind::Nllsq => None,
        };
        self
    }

    fn check_w(&self, w: &[f64]) -> Result<(), ObjectiveError> {
        if w.len() != self.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                got: w.len(),
                expected: self.dim(),
            });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<(), ObjectiveError> {
        if i >= self.n_samples() {
            return Err(ObjectiveError::IndexOutOfRange {
                index: i,
                n_samples: self.n_samples(),
            });
        }
        Ok(())
    }

    fn value_unchecked(&self, w: &[f64], i: usize) -> f64 {
        let z = dot(self.data.row(i), w);
        let y = self.data.label(i);
        match self.kind {
            ObjectiveKind::LeastSquares => 0.5 * (z - y).powi(2),
            ObjectiveKind::Logistic => softplus(-y * z),
            ObjectiveKind::Nllsq => (y - sigmoid(z)).powi(2),
        }
    }

    /// `grad f_i(w) = coefficient * x_i`.
    fn gradient_coefficient(&self, w: &[f64], i: usize) -> f64 {
        let z = dot(self.data.row(i), w);
        let y = self.data.label(i);
        match self.kind {
            ObjectiveKind::LeastSquares => z - y,
            ObjectiveKind::Logistic => -y * sigmoid(-y * z),
            ObjectiveKind::Nllsq => {
                let s = sigmoid(z);
                2.0 * (s - y) * s * (1.0 - s)
            }
        }
    }

    pub fn sample_value(&self, w: &[f64], i: usize) -> Result<f64, ObjectiveError> {
        self.check_w(w)?;
        self.check_index(i)?;
        Ok(self.value_unchecked(w, i))
    }

    pub fn sample_gradient(&self, w: &[f64], i: usize) -> Result<Vec<f64>, ObjectiveError> {
        self.check_w(w)?;
        self.check_index(i)?;
        let c = self.gradient_coefficient(w, i);
        Ok(self.data.row(i).iter().map(|x| c * x).collect())
    }

    /// `f_S(w)`, the mean loss over `batch`.
    pub fn batch_value(&self, w: &[f64], batch: &[usize]) -> Result<f64, ObjectiveError> {
        self.check_w(w)?;
        if batch.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        let mut total = 0.0;
        for &i in batch {
            self.check_index(i)?;
            total += self.value_unchecked(w, i);
        }
        Ok(total / batch.len() as f64)
    }

    /// Per-sample gradients and their statistics over `batch`, in batch order.
    pub fn batch_gradient(&self, w: &[f64], batch: &[usize]) -> Result<PerSampleGradients, ObjectiveError> {
        self.check_w(w)?;
        if batch.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        let d = self.dim();
        let mut rows = Vec::with_capacity(batch.len() * d);
        for &i in batch {
            self.check_index(i)?;
            let c = self.gradient_coefficient(w, i);
            rows.extend(self.data.row(i).iter().map(|x| c * x));
        }
        PerSampleGradients::from_rows(rows, d)
    }

    /// `f(w)` over all samples.
    pub fn full_value(&self, w: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_w(w)?;
        let n = self.n_samples();
        Ok((0..n).map(|i| self.value_unchecked(w, i)).sum::<f64>() / n as f64)
    }

    /// `grad f(w)` over all samples; same summation order as
    /// [`Objective::batch_gradient`] over `0..N`.
    pub fn full_gradient(&self, w: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_w(w)?;
        let d = self.dim();
        let n = self.n_samples();
        let mut g = vec![0.0; d];
        for i in 0..n {
            let c = self.gradient_coefficient(w, i);
            for (gj, x) in g.iter_mut().zip(self.data.row(i)) {
                *gj += c * x;
            }
        }
        for gj in g.iter_mut() {
            *gj /= n as f64;
        }
        Ok(g)
    }

    /// Full gradient plus the total squared deviation of the per-sample
    /// gradients around it.
    pub fn gradient_spread(&self, w: &[f64]) -> Result<GradientSpread, ObjectiveError> {
        let gradient = self.full_gradient(w)?;
        let mut sum_sq_dev = 0.0;
        for i in 0..self.n_samples() {
            let c = self.gradient_coefficient(w, i);
            sum_sq_dev += self
                .data
                .row(i)
                .iter()
                .zip(&gradient)
                .map(|(x, g)| (c * x - g).powi(2))
                .sum::<f64>();
        }
        Ok(GradientSpread {
            norm_sq: dot(&gradient, &gradient),
            gradient,
            sum_sq_dev,
            n_samples: self.n_samples(),
        })
    }

    fn gram(&self) -> DMatrix<f64> {
        let (n, d) = (self.n_samples(), self.dim());
        let a = DMatrix::from_row_slice(n, d, self.data.features());
        a.transpose() * &a / n as f64
    }

    /// Largest eigenvalue of `X^T X / N`.
    pub fn gram_max_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.gram()).eigenvalues.max()
    }

    /// Global smoothness constant bound `curvature * lambda_max(X^T X / N)`.
    pub fn smoothness_estimate(&self) -> f64 {
        self.kind.curvature_bound() * self.gram_max_eigenvalue()
    }

    fn least_squares_optimum(&self) -> KnownOptimum {
        let (n, d) = (self.n_samples(), self.dim());
        let a = DMatrix::from_row_slice(n, d, self.data.features());
        let b = DVector::from_column_slice(self.data.labels());
        let gram = a.transpose() * &a / n as f64;
        let rhs = a.transpose() * b / n as f64;
        let solve = |m: DMatrix<f64>| m.cholesky().map(|c| c.solve(&rhs));
        let w = solve(gram.clone()).unwrap_or_else(|| {
            let ridged = gram + DMatrix::identity(d, d) * 1e-12;
            solve(ridged).unwrap_or_else(|| DVector::zeros(d))
        });
        let weights: Vec<f64> = w.iter().copied().collect();
        let value = self.full_value(&weights).expect("dimension checked");
        KnownOptimum { weights, value }
    }

    fn logistic_optimum(&self) -> KnownOptimum {
        let (n, d) = (self.n_samples(), self.dim());
        let mut w = vec![0.0; d];
        let mut value = self.full_value(&w).expect("dimension checked");
        for _ in 0..200 {
            let g = self.full_gradient(&w).expect("dimension checked");
            let g_norm = dot(&g, &g).sqrt();
            if g_norm <= 1e-10 {
                break;
            }
            let mut hess = DMatrix::<f64>::identity(d, d) * 1e-12;
            for i in 0..n {
                let x = self.data.row(i);
                let s = sigmoid(dot(x, &w));
                let c = s * (1.0 - s) / n as f64;
                for r in 0..d {
                    let cr = c * x[r];
                    if cr == 0.0 {
                        continue;
                    }
                    for col in 0..d {
                        hess[(r, col)] += cr * x[col];
                    }
                }
            }
            let gv = DVector::from_column_slice(&g);
            let direction = match hess.cholesky() {
                Some(ch) => ch.solve(&gv),
                None => gv.clone(),
            };
            let slope = gv.dot(&direction);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = w.iter().zip(direction.iter()).map(|(wi, di)| wi - step * di).collect();
                let trial_value = self.full_value(&trial).expect("dimension checked");
                if trial_value <= value - 1e-4 * step * slope {
                    w = trial;
                    value = trial_value;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        KnownOptimum { weights: w, value }
    }
}
