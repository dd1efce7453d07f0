//! Post-processing of trace files: per-method final and best values with
//! their spread across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{TraceRow, TRACE_COLUMNS};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: columns {found:?} do not match the trace schema")]
    Schema { path: PathBuf, found: Vec<String> },
    #[error("{path}: trace has no rows")]
    Empty { path: PathBuf },
    #[error("{path}: metric {metric} needs f_star in the sidecar {sidecar}")]
    MissingOptimum {
        path: PathBuf,
        metric: Metric,
        sidecar: PathBuf,
    },
    #[error("no trace files given")]
    NoInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Full objective value.
    F,
    /// `f - f*`, with `f*` read from the sidecar.
    Suboptimality,
    /// Full gradient norm.
    GradNorm,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Metric::F => "f",
            Metric::Suboptimality => "suboptimality",
            Metric::GradNorm => "grad_norm",
        };
        f.write_str(s)
    }
}

/// A trace read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub path: PathBuf,
    pub method: String,
    pub f_star: Option<f64>,
    pub rows: Vec<TraceRow>,
}

#[derive(Deserialize)]
struct SidecarHead {
    name: Option<String>,
    f_star: Option<f64>,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Method name from a `<name>_seed<k>.csv` file name.
fn method_from_stem(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rfind("_seed") {
        Some(k) if stem[k + 5..].chars().all(|c| c.is_ascii_digit()) && k + 5 < stem.len() => stem[..k].to_string(),
        _ => stem,
    }
}

pub fn load_trace(path: &Path) -> Result<LoadedTrace, CompareError> {
    let csv_err = |source| CompareError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != TRACE_COLUMNS {
        return Err(CompareError::Schema {
            path: path.to_path_buf(),
            found: header,
        });
    }
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(CompareError::Empty {
            path: path.to_path_buf(),
        });
    }
    let side = sidecar_path(path);
    let head = match std::fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str::<SidecarHead>(&text).ok(),
        Err(_) => None,
    };
    let method = head
        .as_ref()
        .and_then(|h| h.name.clone())
        .unwrap_or_else(|| method_from_stem(path));
    Ok(LoadedTrace {
        path: path.to_path_buf(),
        method,
        f_star: head.and_then(|h| h.f_star),
        rows,
    })
}

fn metric_series(trace: &LoadedTrace, metric: Metric) -> Result<Vec<(f64, f64)>, CompareError> {
    let f_star = match metric {
        Metric::Suboptimality => Some(trace.f_star.ok_or_else(|| CompareError::MissingOptimum {
            path: trace.path.clone(),
            metric,
            sidecar: sidecar_path(&trace.path),
        })?),
        _ => None,
    };
    Ok(trace
        .rows
        .iter()
        .filter_map(|r| {
            let v = match metric {
                Metric::F => r.f,
                Metric::Suboptimality => r.f.map(|f| f - f_star.unwrap_or(0.0)),
                Metric::GradNorm => r.grad_norm_full,
            }?;
            Some((r.epoch, v))
        })
        .collect())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample variance of the metric over the last `window` epochs of a trace.
pub fn tail_variance(series: &[(f64, f64)], window: f64) -> f64 {
    let Some(&(last_epoch, _)) = series.last() else {
        return f64::NAN;
    };
    let tail: Vec<f64> = series
        .iter()
        .filter(|(e, _)| *e >= last_epoch - window)
        .map(|(_, v)| *v)
        .collect();
    if tail.len() < 2 {
        return 0.0;
    }
    let m = tail.iter().sum::<f64>() / tail.len() as f64;
    tail.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (tail.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub traces: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    /// Mean metric at the largest epoch every trace reaches.
    pub aligned_epoch: f64,
    pub aligned_mean: f64,
    pub tail_var_mean: f64,
    /// `final_mean` minus the first method's `final_mean`.
    pub delta_final: f64,
}

/// Groups traces by method (first-seen order) and summarizes each group.
pub fn compare(traces: &[LoadedTrace], metric: Metric, tail_epochs: f64) -> Result<Vec<MethodSummary>, CompareError> {
    if traces.is_empty() {
        return Err(CompareError::NoInput);
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for t in traces {
        let series = metric_series(t, metric)?;
        if series.is_empty() {
            return Err(CompareError::Empty { path: t.path.clone() });
        }
        if !groups.contains_key(&t.method) {
            order.push(t.method.clone());
        }
        groups.entry(t.method.clone()).or_default().push(series);
    }
    let aligned_epoch = groups
        .values()
        .flatten()
        .map(|s| s.last().map_or(0.0, |p| p.0))
        .fold(f64::INFINITY, f64::min);

    let mut out: Vec<MethodSummary> = Vec::new();
    for method in order {
        let runs = &groups[&method];
        let finals: Vec<f64> = runs.iter().map(|s| s.last().expect("non-empty").1).collect();
        let bests: Vec<f64> = runs
            .iter()
            .map(|s| s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min))
            .collect();
        let aligned: Vec<f64> = runs
            .iter()
            .map(|s| s.iter().take_while(|p| p.0 <= aligned_epoch).last().unwrap_or(&s[0]).1)
            .collect();
        let tails: Vec<f64> = runs.iter().map(|s| tail_variance(s, tail_epochs)).collect();
        let (final_mean, final_std) = mean_std(&finals);
        let (best_mean, best_std) = mean_std(&bests);
        out.push(MethodSummary {
            method,
            traces: runs.len(),
            final_mean,
            final_std,
            best_mean,
            best_std,
            aligned_epoch,
            aligned_mean: mean_std(&aligned).0,
            tail_var_mean: mean_std(&tails).0,
            delta_final: 0.0,
        });
    }
    let base = out[0].final_mean;
    for s in &mut out {
        s.delta_final = s.final_mean - base;
    }
    Ok(out)
}

pub fn to_csv(summaries: &[MethodSummary]) -> String {
    let mut s = String::from(
        "method,traces,final_mean,final_std,best_mean,best_std,aligned_epoch,aligned_mean,tail_var_mean,delta_final\n",
    );
    for m in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            m.method,
            m.traces,
            m.final_mean,
            m.final_std,
            m.best_mean,
            m.best_std,
            m.aligned_epoch,
            m.aligned_mean,
            m.tail_var_mean,
            m.delta_final
        );
    }
    s
}
