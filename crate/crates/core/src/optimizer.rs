//! Iteration drivers.
//!
//! Every driver is the same loop parameterised by a [`StepPolicy`] and a
//! [`BatchPolicy`]; the named entry points only check that the combination
//! is the one they stand for. One iteration:
//!
//! 1. pick `|S_t|` (the exact-norm oracle looks at the full gradient here),
//! 2. draw a fresh batch and its per-sample gradients at `w_t`,
//! 3. stop if `||g_S||` is below the stopping threshold,
//! 4. compute the step size (AdaGrad only sees earlier gradients),
//! 5. update, then fold `||g_S||^2` into the AdaGrad accumulator,
//! 6. run the batch tests on the same per-sample gradients and clamp the
//!    recommendation into `[|S_t|, batch_cap]`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batchtests::{approx_norm_test, approx_tests, TestConfig, TestError, TestVerdict};
use crate::objectives::{Objective, ObjectiveError};
use crate::sampler::{Sampler, SamplerError, SamplingMode};
use crate::stepsize::{AdaGradStep, BacktrackingLineSearch, StepError, StepPolicy};

/// Column header of every trace CSV.
pub const TRACE_COLUMNS: [&str; 13] = [
    "iter",
    "samples",
    "epoch",
    "f",
    "grad_norm_full",
    "grad_norm_batch",
    "step_size",
    "batch_size",
    "inner_lhs",
    "inner_rhs",
    "orth_lhs",
    "orth_rhs",
    "status",
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("failed to write trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to write trace: {0}")]
    Csv(#[from] csv::Error),
}

/// How the batch size evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BatchPolicy {
    Fixed {
        size: usize,
    },
    /// Approximated inner-product and orthogonality tests.
    ApproxTests,
    /// Approximated norm test.
    ApproxNormTest,
    /// Smallest batch passing the exact norm test, using the full gradient.
    ExactNormOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub step: StepPolicy,
    pub batch: BatchPolicy,
    #[serde(default)]
    pub tests: TestConfig,
    #[serde(default = "default_initial_batch")]
    pub initial_batch: usize,
    /// Upper bound on `|S|`; the dataset size when absent.
    #[serde(default)]
    pub batch_cap: Option<usize>,
    /// Let adaptive policies shrink the batch instead of holding it.
    #[serde(default)]
    pub allow_shrink: bool,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: f64,
    /// Stop once `||g_S||` drops below this (never below the test floor).
    #[serde(default)]
    pub stop_grad_norm: f64,
    #[serde(default = "default_trace_every")]
    pub trace_every: u64,
    /// Starting point; zeros when absent.
    #[serde(default)]
    pub initial_weights: Option<Vec<f64>>,
}

fn default_initial_batch() -> usize {
    2
}

fn default_max_epochs() -> f64 {
    50.0
}

fn default_trace_every() -> u64 {
    1
}

impl RunConfig {
    pub fn new(step: StepPolicy, batch: BatchPolicy) -> Self {
        Self {
            step,
            batch,
            tests: TestConfig::default(),
            initial_batch: default_initial_batch(),
            batch_cap: None,
            allow_shrink: false,
            sampling: SamplingMode::default(),
            seed: 0,
            max_iterations: None,
            max_epochs: default_max_epochs(),
            stop_grad_norm: 0.0,
            trace_every: default_trace_every(),
            initial_weights: None,
        }
    }

    fn starting_batch(&self) -> usize {
        match self.batch {
            BatchPolicy::Fixed { size } => size,
            _ => self.initial_batch,
        }
    }

    /// Checks the configuration against a dataset of `n_samples` rows with
    /// `dim` features.
    pub fn validate(&self, n_samples: usize, dim: usize) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        self.step.validate()?;
        self.tests.validate()?;
        let start = self.starting_batch();
        let cap = self.batch_cap.unwrap_or(n_samples);
        if start == 0 {
            return bad("batch size must be at least 1".into());
        }
        if cap < start {
            return bad(format!("batch_cap {cap} is below the initial batch {start}"));
        }
        if self.sampling == SamplingMode::WithoutReplacement && cap > n_samples {
            return bad(format!(
                "batch_cap {cap} exceeds the {n_samples} samples available without replacement"
            ));
        }
        if matches!(self.batch, BatchPolicy::ApproxTests | BatchPolicy::ApproxNormTest) && start < 2 {
            return bad("approximated tests need initial_batch >= 2".into());
        }
        if matches!(self.step, StepPolicy::LineSearch { .. }) && start < 2 {
            return bad("line search needs a batch of at least 2".into());
        }
        if !(self.max_epochs > 0.0) {
            return bad(format!("max_epochs = {} must be positive", self.max_epochs));
        }
        if self.trace_every == 0 {
            return bad("trace_every must be at least 1".into());
        }
        if !(self.stop_grad_norm >= 0.0) {
            return bad(format!("stop_grad_norm = {} must be >= 0", self.stop_grad_norm));
        }
        if let Some(w) = &self.initial_weights {
            if w.len() != dim {
                return bad(format!("initial_weights has {} entries, expected {dim}", w.len()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    BudgetExhausted,
    Converged,
    NonFinite,
    LineSearchDiverged,
    CapReached,
}

impl RunStatus {
    pub fn is_success(self) -> bool {
        matches!(self, RunStatus::BudgetExhausted | RunStatus::Converged)
    }
}

/// One recorded iteration. Row `t` describes the step taken at iteration
/// `t` and the full objective at the resulting point `w_{t+1}`; row 0 is the
/// starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    pub samples: u64,
    pub epoch: f64,
    pub f: Option<f64>,
    pub grad_norm_full: Option<f64>,
    pub grad_norm_batch: Option<f64>,
    pub step_size: Option<f64>,
    pub batch_size: Option<usize>,
    pub inner_lhs: Option<f64>,
    pub inner_rhs: Option<f64>,
    pub orth_lhs: Option<f64>,
    pub orth_rhs: Option<f64>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub iterations: u64,
    pub samples: u64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub version: &'static str,
    pub config: RunConfig,
    pub rows: Vec<TraceRow>,
    pub outcome: RunOutcome,
    pub final_weights: Vec<f64>,
}

impl RunTrace {
    pub fn status(&self) -> RunStatus {
        self.outcome.status
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(TRACE_COLUMNS)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Per-iteration details kept for the final row.
#[derive(Debug, Clone, Copy)]
struct StepInfo {
    grad_norm_batch: f64,
    step_size: f64,
    batch_size: usize,
    verdict: Option<TestVerdict>,
}

enum Stepper {
    Constant(f64),
    Adagrad(AdaGradStep),
    LineSearch(BacktrackingLineSearch),
}

impl Stepper {
    fn new(policy: StepPolicy) -> Result<Self, StepError> {
        Ok(match policy {
            StepPolicy::Constant { eta } => Stepper::Constant(eta),
            StepPolicy::Adagrad { alpha, beta, tau } => Stepper::Adagrad(AdaGradStep::new(alpha, beta, tau)?),
            StepPolicy::LineSearch {
                growth,
                max_iters,
                initial_lipschitz,
            } => Stepper::LineSearch(BacktrackingLineSearch::new(growth, max_iters, initial_lipschitz)?),
        })
    }
}

/// Expected squared error of a batch-mean gradient of `size` draws, given
/// the total squared deviation of the `n` per-sample gradients.
pub fn batch_mean_variance(sum_sq_dev: f64, n: usize, size: usize, mode: SamplingMode) -> f64 {
    let pop_var = sum_sq_dev / n as f64;
    match mode {
        SamplingMode::WithReplacement => pop_var / size as f64,
        SamplingMode::WithoutReplacement if n > 1 => {
            let s2 = sum_sq_dev / (n - 1) as f64;
            (s2 / size as f64 * (1.0 - size as f64 / n as f64)).max(0.0)
        }
        SamplingMode::WithoutReplacement => 0.0,
    }
}

/// Smallest `|S|` whose batch-mean variance is at most `bound`, or `None`
/// when no size up to `n` (without replacement) or `cap` qualifies.
pub fn min_norm_test_batch(sum_sq_dev: f64, n: usize, bound: f64, mode: SamplingMode, cap: usize) -> Option<usize> {
    let passes = |s: usize| batch_mean_variance(sum_sq_dev, n, s, mode) <= bound;
    if passes(1) {
        return Some(1);
    }
    let limit = match mode {
        SamplingMode::WithoutReplacement => cap.min(n),
        SamplingMode::WithReplacement => cap,
    };
    if limit == 0 || !passes(limit) {
        return None;
    }
    // the variance is decreasing in |S|: bisect on (fail, pass]
    let (mut lo, mut hi) = (1usize, limit);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

struct Loop<'a> {
    objective: &'a Objective,
    n: usize,
    rows: Vec<TraceRow>,
}

impl Loop<'_> {
    fn record(&mut self, iter: u64, samples: u64, w: &[f64], info: Option<StepInfo>) -> Result<(), RunError> {
        let finite = w.iter().all(|v| v.is_finite());
        let (f, grad_norm_full) = if finite {
            let g = self.objective.full_gradient(w)?;
            (
                Some(self.objective.full_value(w)?),
                Some(g.iter().map(|v| v * v).sum::<f64>().sqrt()),
            )
        } else {
            (Some(f64::NAN), Some(f64::NAN))
        };
        let verdict = info.and_then(|i| i.verdict);
        self.rows.push(TraceRow {
            iter,
            samples,
            epoch: samples as f64 / self.n as f64,
            f,
            grad_norm_full,
            grad_norm_batch: info.map(|i| i.grad_norm_batch),
            step_size: info.map(|i| i.step_size),
            batch_size: info.map(|i| i.batch_size),
            inner_lhs: verdict.map(|v| v.lhs_inner),
            inner_rhs: verdict.map(|v| v.rhs_inner),
            orth_lhs: verdict.map(|v| v.lhs_orth),
            orth_rhs: verdict.map(|v| v.rhs_orth),
            status: RunStatus::Running,
        });
        Ok(())
    }
}

/// Runs any valid combination of step and batch policy.
pub fn run(objective: &Objective, config: &RunConfig) -> Result<RunTrace, RunError> {
    let n = objective.n_samples();
    let dim = objective.dim();
    config.validate(n, dim)?;
    let cap = config.batch_cap.unwrap_or(n);
    let floor = config.stop_grad_norm.max(config.tests.grad_norm_floor);
    let budget = config.max_epochs * n as f64;

    let mut w = config.initial_weights.clone().unwrap_or_else(|| vec![0.0; dim]);
    let mut sampler = Sampler::new(config.seed, config.sampling, n);
    let mut stepper = Stepper::new(config.step)?;
    let mut size = config.starting_batch();
    let mut samples: u64 = 0;
    let mut iter: u64 = 0;
    let mut last: Option<StepInfo> = None;
    let mut recorded_iter = 0;
    let mut message = None;

    let mut lp = Loop {
        objective,
        n,
        rows: Vec::new(),
    };
    lp.record(0, 0, &w, None)?;

    let status = loop {
        if config.max_iterations.is_some_and(|m| iter >= m) || samples as f64 >= budget {
            break RunStatus::BudgetExhausted;
        }

        if config.batch == BatchPolicy::ExactNormOracle {
            let spread = objective.gradient_spread(&w)?;
            if spread.norm_sq.sqrt() < floor {
                break RunStatus::Converged;
            }
            let bound = config.tests.omega.powi(2) * spread.norm_sq;
            match min_norm_test_batch(spread.sum_sq_dev, n, bound, config.sampling, cap) {
                Some(s) if config.allow_shrink => size = s,
                Some(s) => size = size.max(s),
                None => {
                    message = Some(format!("no batch up to {cap} passes the exact norm test"));
                    break RunStatus::CapReached;
                }
            }
        }

        let batch = sampler.draw_batch(size)?;
        let psg = objective.batch_gradient(&w, &batch)?;
        let grad_norm_batch = psg.mean_norm();
        if !grad_norm_batch.is_finite() {
            message = Some(format!("batch gradient is not finite at iteration {}", iter + 1));
            break RunStatus::NonFinite;
        }
        if grad_norm_batch < floor {
            break RunStatus::Converged;
        }

        let step_size = match &mut stepper {
            Stepper::Constant(eta) => *eta,
            Stepper::Adagrad(a) => a.step_size(),
            Stepper::LineSearch(ls) => match ls.search(objective, &w, &batch, &psg) {
                Ok(out) => out.step_size,
                Err(StepError::LineSearchDiverged(k)) => {
                    message = Some(format!("line search gave up after {k} growth steps"));
                    break RunStatus::LineSearchDiverged;
                }
                Err(e) => return Err(e.into()),
            },
        };
        for (wi, gi) in w.iter_mut().zip(&psg.mean) {
            *wi -= step_size * gi;
        }
        iter += 1;
        samples += size as u64;
        if let Stepper::Adagrad(a) = &mut stepper {
            a.accumulate(psg.mean_norm_sq);
        }

        let verdict = if psg.batch_size() >= 2 {
            approx_tests(&psg, &config.tests).ok()
        } else {
            None
        };
        let info = StepInfo {
            grad_norm_batch,
            step_size,
            batch_size: size,
            verdict,
        };
        last = Some(info);

        if !w.iter().all(|v| v.is_finite()) {
            lp.record(iter, samples, &w, Some(info))?;
            recorded_iter = iter;
            message = Some(format!("iterate became non-finite at iteration {iter}"));
            break RunStatus::NonFinite;
        }

        let recommendation = match config.batch {
            BatchPolicy::ApproxTests => verdict.map(|v| v.recommended_size.unwrap_or(size)),
            BatchPolicy::ApproxNormTest => approx_norm_test(&psg, &config.tests)
                .ok()
                .map(|(_, rec)| rec.unwrap_or(size)),
            _ => None,
        };
        if let Some(rec) = recommendation {
            let floor_size = if config.allow_shrink { 2 } else { size };
            size = rec.max(floor_size).min(cap);
        }

        if iter.is_multiple_of(config.trace_every) {
            lp.record(iter, samples, &w, Some(info))?;
            recorded_iter = iter;
        }
    };

    if recorded_iter != iter {
        lp.record(iter, samples, &w, last)?;
    }
    let mut rows = lp.rows;
    if let Some(row) = rows.last_mut() {
        row.status = status;
    }
    log::debug!("run finished: {status:?} after {iter} iterations");
    Ok(RunTrace {
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        rows,
        outcome: RunOutcome {
            status,
            iterations: iter,
            samples,
            message,
        },
        final_weights: w,
    })
}

/// Mini-batch SGD with a fixed batch size and a constant or AdaGrad step.
pub fn run_sgd(objective: &Objective, config: &RunConfig) -> Result<RunTrace, RunError> {
    if !matches!(config.batch, BatchPolicy::Fixed { .. }) {
        return Err(RunError::Config("SGD needs a fixed batch policy".into()));
    }
    if matches!(config.step, StepPolicy::LineSearch { .. }) {
        return Err(RunError::Config("SGD needs a constant or AdaGrad step".into()));
    }
    run(objective, config)
}

/// Line-search steps with batch growth driven by the approximated tests.
pub fn run_adaptive_sampling(objective: &Objective, config: &RunConfig) -> Result<RunTrace, RunError> {
    if !matches!(config.step, StepPolicy::LineSearch { .. }) {
        return Err(RunError::Config("adaptive sampling needs the line-search step".into()));
    }
    if !matches!(config.batch, BatchPolicy::ApproxTests | BatchPolicy::ApproxNormTest) {
        return Err(RunError::Config(
            "adaptive sampling needs an approximated-test batch policy".into(),
        ));
    }
    run(objective, config)
}

/// AdaGrad steps with batch growth driven by the approximated tests.
pub fn run_adabatchgrad(objective: &Objective, config: &RunConfig) -> Result<RunTrace, RunError> {
    if !matches!(config.step, StepPolicy::Adagrad { .. }) {
        return Err(RunError::Config("AdaBatchGrad needs the AdaGrad step".into()));
    }
    if config.batch != BatchPolicy::ApproxTests {
        return Err(RunError::Config(
            "AdaBatchGrad needs the approx_tests batch policy".into(),
        ));
    }
    run(objective, config)
}

/// AdaGrad (or constant) steps with the batch chosen by the exact norm test.
pub fn run_norm_test_oracle(objective: &Objective, config: &RunConfig) -> Result<RunTrace, RunError> {
    if config.batch != BatchPolicy::ExactNormOracle {
        return Err(RunError::Config(
            "the oracle driver needs the exact_norm_oracle batch policy".into(),
        ));
    }
    if matches!(config.step, StepPolicy::LineSearch { .. }) {
        return Err(RunError::Config(
            "the oracle driver needs a constant or AdaGrad step".into(),
        ));
    }
    run(objective, config)
}

/// Step-size conditions under which the AdaGrad convergence bounds hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `2 alpha L < beta^(1/2+tau)` and
/// `4 L alpha (1 + omega^2) < beta^(1/2+tau)` with `L` the smoothness
/// estimate of the objective. Empty for non-AdaGrad steps.
pub fn theory_constraints(objective: &Objective, config: &RunConfig) -> Vec<ConstraintCheck> {
    let StepPolicy::Adagrad { alpha, beta, tau } = config.step else {
        return Vec::new();
    };
    let l = objective.smoothness_estimate();
    let rhs = beta.powf(0.5 + tau);
    let omega = config.tests.omega;
    [
        ("2*alpha*L < beta^(1/2+tau)", 2.0 * alpha * l),
        (
            "4*L*alpha*(1+omega^2) < beta^(1/2+tau)",
            4.0 * l * alpha * (1.0 + omega * omega),
        ),
    ]
    .into_iter()
    .map(|(name, lhs)| ConstraintCheck {
        name,
        lhs,
        rhs,
        holds: lhs < rhs,
    })
    .collect()
}
