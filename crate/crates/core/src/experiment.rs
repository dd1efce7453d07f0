//! Runs every (run, seed) pair of an experiment and writes one CSV trace plus
//! one JSON sidecar per pair.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, DatasetConfig, ExperimentConfig};
use crate::dataspace::{dot, generate_synthetic, Dataset, SyntheticSpec};
use crate::objectives::{Objective, ObjectiveKind};
use crate::optimizer::{run, theory_constraints, ConstraintCheck, RunConfig, RunError, RunOutcome, RunStatus};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {name} (seed {seed}): {source}")]
    Run { name: String, seed: u64, source: RunError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for failures caused by the configuration rather than the system.
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config(ConfigError::Read { .. }) | ExperimentError::Io { .. } => false,
            ExperimentError::Run { source, .. } => matches!(source, RunError::Config(_) | RunError::Step(_)),
            _ => true,
        }
    }
}

/// Contents of the JSON file written next to each trace.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a> {
    pub name: &'a str,
    pub seed: u64,
    pub version: &'static str,
    pub objective: ObjectiveKind,
    pub dataset: &'a DatasetConfig,
    pub n_samples: usize,
    pub n_features: usize,
    pub f_star: Option<f64>,
    pub config: &'a RunConfig,
    pub outcome: &'a RunOutcome,
    pub theory_constraints: Vec<ConstraintCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub name: String,
    pub seed: u64,
    pub csv: PathBuf,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub trace_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub fn trace_stem(name: &str, seed: u64) -> String {
    format!("{name}_seed{seed}")
}

fn write_pair(
    dir: &Path,
    name: &str,
    config: &RunConfig,
    objective: &Objective,
    dataset: &DatasetConfig,
) -> Result<PairResult, ExperimentError> {
    let seed = config.seed;
    let trace = run(objective, config).map_err(|source| ExperimentError::Run {
        name: name.to_string(),
        seed,
        source,
    })?;
    let stem = trace_stem(name, seed);
    let csv = dir.join(format!("{stem}.csv"));
    let file = File::create(&csv).map_err(|e| ExperimentError::io(&csv, e))?;
    trace.write_csv(BufWriter::new(file)).map_err(|source| match source {
        RunError::Io(e) => ExperimentError::io(&csv, e),
        other => ExperimentError::Run {
            name: name.to_string(),
            seed,
            source: other,
        },
    })?;

    let sidecar = Sidecar {
        name,
        seed,
        version: trace.version,
        objective: objective.kind(),
        dataset,
        n_samples: objective.n_samples(),
        n_features: objective.dim(),
        f_star: objective.known_optimum().map(|o| o.value),
        config,
        outcome: &trace.outcome,
        theory_constraints: theory_constraints(objective, config),
    };
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json, text + "\n").map_err(|e| ExperimentError::io(&json, e))?;
    log::info!(
        "{stem}: {:?} after {} iterations",
        trace.outcome.status,
        trace.outcome.iterations
    );
    Ok(PairResult {
        name: name.to_string(),
        seed,
        csv,
        status: trace.outcome.status,
    })
}

/// Executes every (run, seed) pair on a bounded thread pool. Results come
/// back in config order (runs by name, then seeds).
pub fn run_experiment(
    config: &ExperimentConfig,
    base: &Path,
    overrides: &RunOverrides,
) -> Result<Vec<PairResult>, ExperimentError> {
    let objective = config.objective(base)?;
    let dir = overrides
        .out_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;

    let seeds = match overrides.seed {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    };
    let mut pairs = Vec::new();
    for (name, run) in &config.runs {
        for &seed in &seeds {
            let mut c = run.clone();
            c.seed = seed;
            if let Some(every) = overrides.trace_every {
                c.trace_every = every;
            }
            c.validate(objective.n_samples(), objective.dim())
                .map_err(|source| ExperimentError::Run {
                    name: name.clone(),
                    seed,
                    source,
                })?;
            pairs.push((name.as_str(), c));
        }
    }

    let threads = overrides
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, pairs.len().max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        pairs
            .par_iter()
            .map(|(name, c)| write_pair(&dir, name, c, &objective, &config.dataset))
            .collect()
    })
}

/// Sidecar of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedMeta {
    pub seed: u64,
    pub sigma: f64,
    pub n_samples: usize,
    pub n_features: usize,
    pub w_star: Vec<f64>,
    /// Root-mean-square of `b - A w*`; zero for noiseless data.
    pub residual_check: f64,
}

pub const DEFAULT_ROW_CAP: usize = 200_000;

/// Writes the synthetic regression data to `out` (LIBSVM) and its metadata
/// to `out` with `.json` appended.
pub fn generate(spec: &SyntheticSpec, out: &Path, row_cap: usize) -> Result<GeneratedMeta, ExperimentError> {
    if spec.n_samples > row_cap {
        return Err(ExperimentError::Invalid(format!(
            "{} rows requested, above the cap of {row_cap} (raise it with --max-rows)",
            spec.n_samples
        )));
    }
    let (data, w_star) = generate_synthetic(spec).map_err(ConfigError::from)?;
    let meta = GeneratedMeta {
        seed: spec.seed,
        sigma: spec.noise_std,
        n_samples: spec.n_samples,
        n_features: spec.n_features,
        residual_check: residual_rms(&data, &w_star),
        w_star,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    fs::write(out, data.to_libsvm()).map_err(|e| ExperimentError::io(out, e))?;
    let mut json = out.as_os_str().to_owned();
    json.push(".json");
    let json = PathBuf::from(json);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&json, text + "\n").map_err(|e| ExperimentError::io(&json, e))?;
    Ok(meta)
}

fn residual_rms(data: &Dataset, w: &[f64]) -> f64 {
    let n = data.n_samples();
    let sum: f64 = (0..n).map(|i| (data.label(i) - dot(data.row(i), w)).powi(2)).sum();
    (sum / n as f64).sqrt()
}
