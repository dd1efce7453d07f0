//! Experiment configuration files (TOML) and dataset loading.
//!
//! ```toml
//! objective = "least_squares"
//! seeds = [1, 2, 3, 4, 5]
//!
//! [dataset]
//! source = "synthetic"
//! n_samples = 1000
//! n_features = 20
//! noise_std = 4.0
//! seed = 7
//!
//! [runs.sgd]
//! step = { policy = "constant", eta = 0.01 }
//! batch = { policy = "fixed", size = 2 }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspace::{
    generate_categorical_binary, generate_synthetic, generate_synthetic_classification, parse_libsvm, DataError,
    Dataset, LabelConvention, SyntheticSpec,
};
use crate::objectives::{Objective, ObjectiveError, ObjectiveKind};
use crate::optimizer::RunConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("dataset {path}: {source}")]
    Dataset { path: PathBuf, source: DataError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Gaussian features with a Gaussian ground-truth weight vector.
    Synthetic {
        n_samples: usize,
        n_features: usize,
        noise_std: f64,
        seed: u64,
    },
    /// One-hot categorical features with logistic labels.
    Categorical { n_samples: usize, seed: u64 },
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        n_features: Option<usize>,
        /// Keep only the first rows.
        #[serde(default)]
        subset: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub intercept: bool,
}

/// Labels the objective expects from a loaded file.
pub fn label_convention(kind: ObjectiveKind) -> LabelConvention {
    match kind {
        ObjectiveKind::LeastSquares => LabelConvention::Raw,
        ObjectiveKind::Logistic => LabelConvention::PlusMinusOne,
        ObjectiveKind::Nllsq => LabelConvention::ZeroOne,
    }
}

impl DatasetConfig {
    /// Loads or generates the data. Relative paths resolve against `base`.
    pub fn load(&self, kind: ObjectiveKind, base: &Path) -> Result<Dataset, ConfigError> {
        let convention = label_convention(kind);
        let mut data = match &self.source {
            DataSource::Synthetic {
                n_samples,
                n_features,
                noise_std,
                seed,
            } => {
                let spec = SyntheticSpec {
                    n_samples: *n_samples,
                    n_features: *n_features,
                    noise_std: *noise_std,
                    seed: *seed,
                };
                match kind {
                    ObjectiveKind::LeastSquares => generate_synthetic(&spec)?.0,
                    _ => generate_synthetic_classification(&spec, convention)?.0,
                }
            }
            DataSource::Categorical { n_samples, seed } => generate_categorical_binary(*n_samples, *seed, convention)?,
            DataSource::Libsvm {
                path,
                n_features,
                subset,
            } => {
                let path = base.join(path);
                let file = File::open(&path).map_err(|e| ConfigError::Dataset {
                    path: path.clone(),
                    source: DataError::Io(e),
                })?;
                let data = parse_libsvm(BufReader::new(file), *n_features, convention)
                    .map_err(|source| ConfigError::Dataset { path, source })?;
                match subset {
                    Some(n) => data.head(*n)?,
                    None => data,
                }
            }
        };
        if self.standardize {
            data = data.standardized();
        }
        if self.intercept {
            data = data.with_intercept();
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    pub dataset: DatasetConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Runs keyed by name; names become output file stems.
    pub runs: BTreeMap<String, RunConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs.is_empty() {
            return Err(ConfigError::Invalid("runs: at least one run is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds: at least one seed is required".into()));
        }
        for name in self.runs.keys() {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return Err(ConfigError::Invalid(format!(
                    "runs.{name}: run names must be non-empty and use only [A-Za-z0-9._-]"
                )));
            }
        }
        Ok(())
    }

    /// Builds the objective, with its reference optimum when one is known.
    pub fn objective(&self, base: &Path) -> Result<Objective, ConfigError> {
        let data = self.dataset.load(self.objective, base)?;
        Ok(Objective::new(self.objective, Arc::new(data))?.with_known_optimum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::BatchPolicy;
    use crate::stepsize::StepPolicy;

    const SAMPLE: &str = r#"
objective = "least_squares"

[dataset]
source = "synthetic"
n_samples = 100
n_features = 5
noise_std = 1.0
seed = 7

[runs.sgd]
step = { policy = "constant", eta = 0.01 }
batch = { policy = "fixed", size = 2 }

[runs.adabatchgrad]
step = { policy = "adagrad", alpha = 2.23606797749979, beta = 50000.0 }
batch = { policy = "approx_tests" }
tests = { theta = 1.5, nu = 7.0 }
max_epochs = 10.0
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml(SAMPLE, Path::new("x.toml")).unwrap();
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(c.runs["sgd"].batch, BatchPolicy::Fixed { size: 2 });
        assert!(matches!(c.runs["adabatchgrad"].step, StepPolicy::Adagrad { tau, .. } if tau == 0.0));
        assert_eq!(c.runs["adabatchgrad"].tests.omega, 1.0);
        let again = ExperimentConfig::from_toml(&c.to_toml(), Path::new("y.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let empty_seeds = SAMPLE.replace(
            "objective = \"least_squares\"",
            "objective = \"least_squares\"\nseeds = []",
        );
        let err = ExperimentConfig::from_toml(&empty_seeds, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");

        let dup = SAMPLE.replace("[runs.adabatchgrad]", "[runs.sgd]");
        assert!(ExperimentConfig::from_toml(&dup, Path::new("x.toml")).is_err());

        let no_runs = SAMPLE.split("[runs.sgd]").next().unwrap();
        let err = ExperimentConfig::from_toml(no_runs, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("runs"), "{err}");

        let unknown = SAMPLE.replace("[runs.sgd]", "[runs.sgd]\nbogus = 1");
        let err = ExperimentConfig::from_toml(&unknown, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn loads_each_source() {
        let base = Path::new(".");
        let synth = DatasetConfig {
            source: DataSource::Synthetic {
                n_samples: 30,
                n_features: 3,
                noise_std: 1.0,
                seed: 1,
            },
            standardize: false,
            intercept: true,
        };
        let d = synth.load(ObjectiveKind::Logistic, base).unwrap();
        assert_eq!(d.n_features(), 4);
        assert!(d.labels().iter().all(|&y| y == 1.0 || y == -1.0));

        let cat = DatasetConfig {
            source: DataSource::Categorical { n_samples: 40, seed: 2 },
            standardize: false,
            intercept: false,
        };
        let d = cat.load(ObjectiveKind::Nllsq, base).unwrap();
        assert_eq!(d.n_features(), 123);
        assert!(d.labels().iter().all(|&y| y == 0.0 || y == 1.0));

        let missing = DatasetConfig {
            source: DataSource::Libsvm {
                path: "does/not/exist.libsvm".into(),
                n_features: None,
                subset: None,
            },
            standardize: false,
            intercept: false,
        };
        let err = missing.load(ObjectiveKind::Logistic, base).unwrap_err();
        assert!(err.to_string().contains("does/not/exist.libsvm"));
    }
}
