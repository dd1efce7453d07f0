//! Step-size policies: constant, the AdaGrad-norm rule
//! `eta_t = alpha / (beta + G_{t-1})^(1/2 + tau)` and variance-aware
//! backtracking line search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{Objective, ObjectiveError, PerSampleGradients};

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("line search did not satisfy the sufficient-decrease condition after {0} growth steps")]
    LineSearchDiverged(usize),
    #[error("batch gradient norm is zero")]
    DegenerateGradient,
    #[error("line search needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid step-size parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Constant step sizes used by the step-size comparison presets.
pub const CONSTANT_GRID: [f64; 3] = [1.0, 0.1, 0.01];

/// Serializable description of a step-size policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StepPolicy {
    Constant {
        eta: f64,
    },
    Adagrad {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        tau: f64,
    },
    LineSearch {
        #[serde(default = "default_growth")]
        growth: f64,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_initial_lipschitz")]
        initial_lipschitz: f64,
    },
}

fn default_growth() -> f64 {
    2.0
}

fn default_max_iters() -> usize {
    60
}

fn default_initial_lipschitz() -> f64 {
    1.0
}

impl StepPolicy {
    pub fn line_search() -> Self {
        StepPolicy::LineSearch {
            growth: default_growth(),
            max_iters: default_max_iters(),
            initial_lipschitz: default_initial_lipschitz(),
        }
    }

    /// AdaGrad parameters whose initial step `alpha / sqrt(beta)` equals `eta`
    /// (`tau = 0`).
    pub fn adagrad_matching(eta: f64, beta: f64) -> Self {
        StepPolicy::Adagrad {
            alpha: eta * beta.sqrt(),
            beta,
            tau: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let bad = |msg: String| Err(StepError::InvalidParameter(msg));
        match *self {
            StepPolicy::Constant { eta } if !(eta >= 0.0 && eta.is_finite()) => bad(format!("eta = {eta}")),
            StepPolicy::Adagrad { alpha, beta, tau } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    bad(format!("alpha = {alpha}"))
                } else if !(beta > 0.0 && beta.is_finite()) {
                    bad(format!("beta = {beta}"))
                } else if !(0.0..0.5).contains(&tau) {
                    bad(format!("tau = {tau} not in [0, 1/2)"))
                } else {
                    Ok(())
                }
            }
            StepPolicy::LineSearch {
                growth,
                max_iters,
                initial_lipschitz,
            } => {
                if !(growth > 1.0 && growth.is_finite()) {
                    bad(format!("growth = {growth}"))
                } else if max_iters == 0 {
                    bad("max_iters = 0".into())
                } else if !(initial_lipschitz > 0.0 && initial_lipschitz.is_finite()) {
                    bad(format!("initial_lipschitz = {initial_lipschitz}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// AdaGrad-norm step state. The accumulator only ever holds gradients of
/// iterations that already took their step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradStep {
    alpha: f64,
    beta: f64,
    tau: f64,
    accum: f64,
}

impl AdaGradStep {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self, StepError> {
        StepPolicy::Adagrad { alpha, beta, tau }.validate()?;
        Ok(Self {
            alpha,
            beta,
            tau,
            accum: 0.0,
        })
    }

    /// `alpha / (beta + G)^(1/2 + tau)`.
    pub fn step_size(&self) -> f64 {
        self.alpha / (self.beta + self.accum).powf(0.5 + self.tau)
    }

    /// Adds `||grad f_S(w_t)||^2`; call once per iteration, after the step.
    pub fn accumulate(&mut self, batch_grad_norm_sq: f64) {
        debug_assert!(batch_grad_norm_sq >= 0.0);
        self.accum += batch_grad_norm_sq;
    }

    pub fn accumulated(&self) -> f64 {
        self.accum
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub lipschitz: f64,
    pub step_size: f64,
    pub growth_steps: usize,
}

/// Backtracking on the Lipschitz estimate `L`. Each call starts from the
/// previous accepted `L` shrunk by `zeta = max(1, 2 / a_t)` with
/// `a_t = 1 + Var_S / (|S| ||g_S||^2)`, then grows `L` geometrically until
/// `f_S(w - g_S / L) <= f_S(w) - ||g_S||^2 / (2L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackingLineSearch {
    growth: f64,
    max_iters: usize,
    lipschitz_prev: f64,
}

impl BacktrackingLineSearch {
    pub fn new(growth: f64, max_iters: usize, initial_lipschitz: f64) -> Result<Self, StepError> {
        StepPolicy::LineSearch {
            growth,
            max_iters,
            initial_lipschitz,
        }
        .validate()?;
        Ok(Self {
            growth,
            max_iters,
            lipschitz_prev: initial_lipschitz,
        })
    }

    pub fn previous_lipschitz(&self) -> f64 {
        self.lipschitz_prev
    }

    pub fn search(
        &mut self,
        objective: &Objective,
        w: &[f64],
        batch: &[usize],
        psg: &PerSampleGradients,
    ) -> Result<LineSearchOutcome, StepError> {
        let size = psg.batch_size();
        if size < 2 {
            return Err(StepError::BatchTooSmall(size));
        }
        let g_norm_sq = psg.mean_norm_sq;
        if !(g_norm_sq > 0.0) {
            return Err(StepError::DegenerateGradient);
        }
        let sample_var = psg.sum_sq_dev_total / (size - 1) as f64;
        let a = sample_var / (size as f64 * g_norm_sq) + 1.0;
        let zeta = (2.0 / a).max(1.0);
        let mut lipschitz = self.lipschitz_prev / zeta;

        let f0 = objective.batch_value(w, batch)?;
        let mut trial = vec![0.0; w.len()];
        let mut growth_steps = 0;
        loop {
            for ((t, wi), gi) in trial.iter_mut().zip(w).zip(&psg.mean) {
                *t = wi - gi / lipschitz;
            }
            let f_new = objective.batch_value(&trial, batch)?;
            if f_new <= f0 - g_norm_sq / (2.0 * lipschitz) {
                break;
            }
            if growth_steps == self.max_iters {
                return Err(StepError::LineSearchDiverged(growth_steps));
            }
            lipschitz *= self.growth;
            growth_steps += 1;
        }
        self.lipschitz_prev = lipschitz;
        Ok(LineSearchOutcome {
            lipschitz,
            step_size: 1.0 / lipschitz,
            growth_steps,
        })
    }
}
