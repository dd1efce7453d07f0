use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adabatch::compare::{compare, load_trace, to_csv, CompareError, Metric};
use adabatch::config::ExperimentConfig;
use adabatch::dataspace::SyntheticSpec;
use adabatch::experiment::{generate, run_experiment, ExperimentError, RunOverrides, DEFAULT_ROW_CAP};
use adabatch::inconsistency::{demo_table, summarize, write_demo_csv, DemoSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_RUN_FAILED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "opt", version, about = "Adaptive step and batch size SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic regression dataset (LIBSVM) and its metadata.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 20)]
        n_features: usize,
        #[arg(long, default_value_t = 4.0)]
        noise_std: f64,
        #[arg(long, default_value_t = DEFAULT_ROW_CAP)]
        max_rows: usize,
    },
    /// Run every (run, seed) pair of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config.
        #[arg(long, env = "ADABATCH_OUT_DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        trace_every: Option<u64>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Tabulate where the approximated inner-product test disagrees with the exact one.
    DemoInconsistency {
        #[arg(long, default_value_t = 0.5)]
        w: f64,
        #[arg(long, default_value_t = 20)]
        batch_total: usize,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        xi_neg: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        xi_pos: f64,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize trace files per method across seeds.
    Compare {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::F)]
        metric: Metric,
        /// Window for the trailing variance, in epochs.
        #[arg(long, default_value_t = 10.0)]
        tail_epochs: f64,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn write_output(out: Option<&Path>, text: &[u8]) -> io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text),
        None => io::stdout().lock().write_all(text),
    }
}

fn experiment_failure(e: ExperimentError) -> ExitCode {
    let code = if e.is_config() { EXIT_USAGE } else { EXIT_IO };
    fail(code, e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Generate {
            out,
            seed,
            n_samples,
            n_features,
            noise_std,
            max_rows,
        } => {
            let spec = SyntheticSpec {
                n_samples,
                n_features,
                noise_std,
                seed,
            };
            match generate(&spec, &out, max_rows) {
                Ok(meta) => {
                    eprintln!(
                        "wrote {} ({} rows, residual {})",
                        out.display(),
                        meta.n_samples,
                        meta.residual_check
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => experiment_failure(e),
            }
        }
        Command::Run {
            config,
            seed,
            out,
            trace_every,
            jobs,
        } => {
            let parsed = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return experiment_failure(e.into()),
            };
            let base = config.parent().unwrap_or(Path::new("."));
            let overrides = RunOverrides {
                seed,
                trace_every,
                out_dir: out,
                jobs,
            };
            let results = match run_experiment(&parsed, base, &overrides) {
                Ok(r) => r,
                Err(e) => return experiment_failure(e),
            };
            let mut failed = 0;
            for r in &results {
                println!("{}\t{}\t{:?}\t{}", r.name, r.seed, r.status, r.csv.display());
                if !r.status.is_success() {
                    failed += 1;
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} runs did not finish normally", results.len());
                ExitCode::from(EXIT_RUN_FAILED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::DemoInconsistency {
            w,
            batch_total,
            theta,
            xi_neg,
            xi_pos,
            out,
        } => {
            let spec = DemoSpec {
                w,
                batch_total,
                theta_a: theta,
                xi_neg,
                xi_pos,
            };
            let rows = match demo_table(&spec) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            let mut buf = Vec::new();
            write_demo_csv(&rows, &mut buf).expect("writing to memory");
            if let Err(e) = write_output(out.as_deref(), &buf) {
                return fail(EXIT_IO, e);
            }
            eprintln!("{}", summarize(&rows));
            ExitCode::SUCCESS
        }
        Command::Compare {
            traces,
            metric,
            tail_epochs,
            out,
        } => {
            let loaded: Result<Vec<_>, _> = traces.iter().map(|p| load_trace(p)).collect();
            let summary = loaded.and_then(|t| compare(&t, metric, tail_epochs));
            match summary {
                Ok(s) => match write_output(out.as_deref(), to_csv(&s).as_bytes()) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(EXIT_IO, e),
                },
                Err(e @ (CompareError::Io { .. } | CompareError::Csv { .. })) => fail(EXIT_IO, e),
                Err(e) => fail(EXIT_USAGE, e),
            }
        }
    }
}
