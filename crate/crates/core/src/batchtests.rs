//! Gradient-quality tests that decide whether a batch is large enough.
//!
//! Exact tests compare per-sample gradients against the true gradient and
//! are only available when the full gradient can be computed. Approximated
//! tests replace the true gradient by the batch mean and expectations by
//! Bessel-corrected sample statistics. All inequalities are in variance form:
//!
//! * norm:          `E||g_S - g||^2 <= omega^2 ||g||^2`
//! * inner product: `Var(g_i^T g) / |S| <= theta^2 ||g||^4`
//! * orthogonality: `E||g_i - proj_g g_i||^2 / |S| <= nu^2 ||g||^2`

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspace::dot;
use crate::objectives::PerSampleGradients;

#[derive(Debug, Error, PartialEq)]
pub enum TestError {
    #[error("gradient norm {0:e} is below the degeneracy floor")]
    DegenerateGradient(f64),
    #[error("approximated tests need |S| >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid test configuration: {0}")]
    InvalidConfig(String),
    #[error("per-sample gradients have dimension {got}, true gradient has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub theta: f64,
    pub nu: f64,
    pub omega: f64,
    pub grad_norm_floor: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            theta: 1.5,
            nu: 7.0,
            omega: 1.0,
            grad_norm_floor: 1e-12,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<(), TestError> {
        for (name, v) in [("theta", self.theta), ("nu", self.nu), ("omega", self.omega)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TestError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.grad_norm_floor >= 0.0) {
            return Err(TestError::InvalidConfig(format!(
                "grad_norm_floor = {} must be >= 0",
                self.grad_norm_floor
            )));
        }
        Ok(())
    }

    fn check_norm(&self, norm_sq: f64) -> Result<(), TestError> {
        let norm = norm_sq.sqrt();
        if norm_sq == 0.0 || norm < self.grad_norm_floor || !norm.is_finite() {
            return Err(TestError::DegenerateGradient(norm));
        }
        Ok(())
    }
}

/// Outcome of one exact test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactVerdict {
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl ExactVerdict {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            pass: lhs <= rhs,
            lhs,
            rhs,
        }
    }
}

/// Outcome of the approximated inner-product and orthogonality tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestVerdict {
    pub inner_pass: bool,
    pub orth_pass: bool,
    /// Ceiling of the recommended batch size, present iff a test failed.
    pub recommended_size: Option<usize>,
    pub lhs_inner: f64,
    pub rhs_inner: f64,
    pub lhs_orth: f64,
    pub rhs_orth: f64,
}

impl TestVerdict {
    pub fn passed(&self) -> bool {
        self.inner_pass && self.orth_pass
    }
}

/// `max(1, ceil(ratio))`, saturating for huge ratios.
fn ceil_size(ratio: f64) -> usize {
    if ratio.is_nan() {
        return usize::MAX;
    }
    (ratio.ceil() as usize).max(1)
}

/// Exact norm test. `variance_of_mean` is `E||g_S - g||^2`, supplied either
/// in closed form or from the sampling distribution of the batch mean.
pub fn exact_norm_test(variance_of_mean: f64, true_grad: &[f64], cfg: &TestConfig) -> Result<ExactVerdict, TestError> {
    let norm_sq = dot(true_grad, true_grad);
    cfg.check_norm(norm_sq)?;
    Ok(ExactVerdict::new(variance_of_mean, cfg.omega.powi(2) * norm_sq))
}

fn check_rows(rows: &[f64], dim: usize, true_grad: &[f64]) -> Result<usize, TestError> {
    if dim != true_grad.len() || dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(TestError::DimensionMismatch {
            got: dim,
            expected: true_grad.len(),
        });
    }
    Ok(rows.len() / dim)
}

/// Population second moments of the per-sample gradients `rows` (equally
/// weighted) around the true gradient: `(E(g_i^T g - ||g||^2)^2,
/// E||g_i - proj_g g_i||^2, ||g||^2)`.
fn exact_moments(rows: &[f64], dim: usize, true_grad: &[f64]) -> Result<(f64, f64, f64), TestError> {
    let n = check_rows(rows, dim, true_grad)?;
    let norm_sq = dot(true_grad, true_grad);
    let mut inner = 0.0;
    let mut orth = 0.0;
    for row in rows.chunks_exact(dim) {
        let proj = dot(row, true_grad);
        inner += (proj - norm_sq).powi(2);
        if dim > 1 && norm_sq > 0.0 {
            let coef = proj / norm_sq;
            orth += row
                .iter()
                .zip(true_grad)
                .map(|(r, g)| (r - coef * g).powi(2))
                .sum::<f64>();
        }
    }
    Ok((inner / n as f64, orth / n as f64, norm_sq))
}

/// Exact inner-product test for a batch of `batch_size` draws from the
/// distribution whose per-sample gradients are `rows`.
pub fn exact_inner_product_test(
    rows: &[f64],
    dim: usize,
    true_grad: &[f64],
    batch_size: usize,
    cfg: &TestConfig,
) -> Result<ExactVerdict, TestError> {
    let (inner, _, norm_sq) = exact_moments(rows, dim, true_grad)?;
    cfg.check_norm(norm_sq)?;
    Ok(ExactVerdict::new(
        inner / batch_size as f64,
        cfg.theta.powi(2) * norm_sq.powi(2),
    ))
}

/// Exact orthogonality test; see [`exact_inner_product_test`].
pub fn exact_orthogonality_test(
    rows: &[f64],
    dim: usize,
    true_grad: &[f64],
    batch_size: usize,
    cfg: &TestConfig,
) -> Result<ExactVerdict, TestError> {
    let (_, orth, norm_sq) = exact_moments(rows, dim, true_grad)?;
    cfg.check_norm(norm_sq)?;
    Ok(ExactVerdict::new(orth / batch_size as f64, cfg.nu.powi(2) * norm_sq))
}

/// Smallest batch size passing both exact tests for the distribution `rows`.
pub fn exact_recommended_size(
    rows: &[f64],
    dim: usize,
    true_grad: &[f64],
    cfg: &TestConfig,
) -> Result<usize, TestError> {
    let (inner, orth, norm_sq) = exact_moments(rows, dim, true_grad)?;
    cfg.check_norm(norm_sq)?;
    let by_inner = inner / (cfg.theta.powi(2) * norm_sq.powi(2));
    let by_orth = orth / (cfg.nu.powi(2) * norm_sq);
    Ok(ceil_size(by_inner.max(by_orth)))
}

/// Approximated tests on the per-sample gradients of the current batch.
pub fn approx_tests(psg: &PerSampleGradients, cfg: &TestConfig) -> Result<TestVerdict, TestError> {
    approx_tests_with_size(psg, psg.batch_size(), cfg)
}

/// [`approx_tests`] with an explicit `|S|` in the denominators.
pub fn approx_tests_with_size(
    psg: &PerSampleGradients,
    size: usize,
    cfg: &TestConfig,
) -> Result<TestVerdict, TestError> {
    if size < 2 {
        return Err(TestError::BatchTooSmall(size));
    }
    let norm_sq = psg.mean_norm_sq;
    cfg.check_norm(norm_sq)?;
    let denom = ((size - 1) * size) as f64;
    let lhs_inner = psg.sum_sq_dev_inner / denom;
    let rhs_inner = cfg.theta.powi(2) * norm_sq.powi(2);
    let lhs_orth = psg.sum_sq_dev_orth / denom;
    let rhs_orth = cfg.nu.powi(2) * norm_sq;
    let inner_pass = lhs_inner <= rhs_inner;
    let orth_pass = lhs_orth <= rhs_orth;
    let recommended_size = if inner_pass && orth_pass {
        None
    } else {
        Some(approx_recommended_size_with(psg, size, cfg)?)
    };
    Ok(TestVerdict {
        inner_pass,
        orth_pass,
        recommended_size,
        lhs_inner,
        rhs_inner,
        lhs_orth,
        rhs_orth,
    })
}

/// Batch size suggested by the approximated tests:
/// `ceil(max(sum_inner / ((|S|-1) theta^2 ||g_S||^4), sum_orth / ((|S|-1) nu^2 ||g_S||^2)))`,
/// never below 1.
pub fn approx_recommended_size(psg: &PerSampleGradients, cfg: &TestConfig) -> Result<usize, TestError> {
    approx_recommended_size_with(psg, psg.batch_size(), cfg)
}

fn approx_recommended_size_with(psg: &PerSampleGradients, size: usize, cfg: &TestConfig) -> Result<usize, TestError> {
    if size < 2 {
        return Err(TestError::BatchTooSmall(size));
    }
    let norm_sq = psg.mean_norm_sq;
    cfg.check_norm(norm_sq)?;
    let m = (size - 1) as f64;
    let by_inner = psg.sum_sq_dev_inner / (m * cfg.theta.powi(2) * norm_sq.powi(2));
    let by_orth = psg.sum_sq_dev_orth / (m * cfg.nu.powi(2) * norm_sq);
    Ok(ceil_size(by_inner.max(by_orth)))
}

/// Approximated norm test: `Var_S / (|S| ||g_S||^2) <= omega^2` with the
/// Bessel-corrected sample variance. On failure the recommendation is
/// `ceil(Var_S / (omega^2 ||g_S||^2))`.
pub fn approx_norm_test(
    psg: &PerSampleGradients,
    cfg: &TestConfig,
) -> Result<(ExactVerdict, Option<usize>), TestError> {
    let size = psg.batch_size();
    if size < 2 {
        return Err(TestError::BatchTooSmall(size));
    }
    let norm_sq = psg.mean_norm_sq;
    cfg.check_norm(norm_sq)?;
    let sample_var = psg.sum_sq_dev_total / (size - 1) as f64;
    let verdict = ExactVerdict::new(sample_var / size as f64, cfg.omega.powi(2) * norm_sq);
    let recommended = if verdict.pass {
        None
    } else {
        Some(ceil_size(sample_var / (cfg.omega.powi(2) * norm_sq)))
    };
    Ok((verdict, recommended))
}
