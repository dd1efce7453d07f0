//! C ABI over the `adabatch` library.
//!
//! Every function returns an [`AbStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`ab_last_error_message`]. Datasets
//! and traces are opaque handles owned by the caller and released with their
//! `_free` function. Panics never cross the boundary; they surface as
//! `AB_STATUS_PANIC`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use adabatch::batchtests::{approx_tests, TestConfig, TestError};
use adabatch::config::label_convention;
use adabatch::dataspace::{
    generate_synthetic, generate_synthetic_classification, parse_libsvm, DataError, Dataset, SyntheticSpec,
};
use adabatch::objectives::{Objective, ObjectiveError, ObjectiveKind, PerSampleGradients};
use adabatch::optimizer::{run, RunConfig, RunError, RunStatus, RunTrace};
use adabatch::stepsize::{AdaGradStep, StepError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Data = 5,
    Run = 6,
    DegenerateGradient = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbObjective {
    LeastSquares = 0,
    Logistic = 1,
    Nllsq = 2,
}

impl From<AbObjective> for ObjectiveKind {
    fn from(o: AbObjective) -> Self {
        match o {
            AbObjective::LeastSquares => ObjectiveKind::LeastSquares,
            AbObjective::Logistic => ObjectiveKind::Logistic,
            AbObjective::Nllsq => ObjectiveKind::Nllsq,
        }
    }
}

/// How a run ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbRunStatus {
    Running = 0,
    BudgetExhausted = 1,
    Converged = 2,
    NonFinite = 3,
    LineSearchDiverged = 4,
    CapReached = 5,
}

impl From<RunStatus> for AbRunStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Running => AbRunStatus::Running,
            RunStatus::BudgetExhausted => AbRunStatus::BudgetExhausted,
            RunStatus::Converged => AbRunStatus::Converged,
            RunStatus::NonFinite => AbRunStatus::NonFinite,
            RunStatus::LineSearchDiverged => AbRunStatus::LineSearchDiverged,
            RunStatus::CapReached => AbRunStatus::CapReached,
        }
    }
}

/// A dataset together with the objective its labels were prepared for.
pub struct AbDataset {
    data: Arc<Dataset>,
    objective: ObjectiveKind,
}

pub struct AbTrace {
    trace: RunTrace,
}

/// One recorded iterate. Missing values are NaN; `batch_size` is 0 on the
/// initial row.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbTraceRow {
    pub iter: u64,
    pub samples: u64,
    pub epoch: f64,
    pub f: f64,
    pub grad_norm_full: f64,
    pub grad_norm_batch: f64,
    pub step_size: f64,
    pub batch_size: usize,
    pub inner_lhs: f64,
    pub inner_rhs: f64,
    pub orth_lhs: f64,
    pub orth_rhs: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbTestConfig {
    pub theta: f64,
    pub nu: f64,
    pub omega: f64,
}

/// Result of the approximated inner-product and orthogonality tests.
/// `recommended_size` is 0 when both tests pass.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbTestVerdict {
    pub inner_pass: bool,
    pub orth_pass: bool,
    pub recommended_size: usize,
    pub lhs_inner: f64,
    pub rhs_inner: f64,
    pub lhs_orth: f64,
    pub rhs_orth: f64,
}

struct Failure {
    status: AbStatus,
    message: String,
}

impl Failure {
    fn new(status: AbStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let status = match e {
            DataError::Io(_) => AbStatus::Io,
            _ => AbStatus::Data,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<ObjectiveError> for Failure {
    fn from(e: ObjectiveError) -> Self {
        Failure::new(AbStatus::Data, e.to_string())
    }
}

impl From<StepError> for Failure {
    fn from(e: StepError) -> Self {
        Failure::new(AbStatus::InvalidArgument, e.to_string())
    }
}

impl From<TestError> for Failure {
    fn from(e: TestError) -> Self {
        let status = match e {
            TestError::DegenerateGradient(_) => AbStatus::DegenerateGradient,
            _ => AbStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::Config(_) | RunError::Step(_) => AbStatus::Config,
            RunError::Io(_) | RunError::Csv(_) => AbStatus::Io,
            _ => AbStatus::Run,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AbStatus {
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(AbStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            AbStatus::Ok
        }
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(AbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed_dataset(data: Dataset, objective: ObjectiveKind) -> *mut AbDataset {
    Box::into_raw(Box::new(AbDataset {
        data: Arc::new(data),
        objective,
    }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next `ab_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a LIBSVM file with labels mapped for `objective`. `n_features` of 0
/// infers the dimension from the largest index.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_from_libsvm(
    path: *const c_char,
    objective: AbObjective,
    n_features: usize,
    out: *mut *mut AbDataset,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = c_str(path, "path")?;
        let kind = ObjectiveKind::from(objective);
        let file = File::open(path).map_err(|e| Failure::new(AbStatus::Io, format!("{path}: {e}")))?;
        let dim = (n_features > 0).then_some(n_features);
        let data = parse_libsvm(BufReader::new(file), dim, label_convention(kind))?;
        *out = boxed_dataset(data, kind);
        Ok(())
    })
}

/// Seeded Gaussian data. Least squares gets the noisy linear targets;
/// the classification objectives get their sign.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_synthetic(
    objective: AbObjective,
    n_samples: usize,
    n_features: usize,
    noise_std: f64,
    seed: u64,
    out: *mut *mut AbDataset,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let kind = ObjectiveKind::from(objective);
        let spec = SyntheticSpec {
            n_samples,
            n_features,
            noise_std,
            seed,
        };
        let data = match kind {
            ObjectiveKind::LeastSquares => generate_synthetic(&spec)?.0,
            _ => generate_synthetic_classification(&spec, label_convention(kind))?.0,
        };
        *out = boxed_dataset(data, kind);
        Ok(())
    })
}

/// Copies a row-major `n_samples x n_features` matrix and its labels.
///
/// # Safety
/// `features` must hold `n_samples * n_features` doubles, `labels`
/// `n_samples` doubles, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_from_dense(
    objective: AbObjective,
    features: *const f64,
    labels: *const f64,
    n_samples: usize,
    n_features: usize,
    out: *mut *mut AbDataset,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if features.is_null() || labels.is_null() {
            return Err(null("features or labels"));
        }
        let len = n_samples
            .checked_mul(n_features)
            .ok_or_else(|| Failure::new(AbStatus::InvalidArgument, "matrix size overflows"))?;
        let kind = ObjectiveKind::from(objective);
        let x = std::slice::from_raw_parts(features, len).to_vec();
        let y = std::slice::from_raw_parts(labels, n_samples).to_vec();
        let data = Dataset::new(x, y, kind.label_kind())?;
        Objective::new(kind, Arc::new(data.clone()))?;
        *out = boxed_dataset(data, kind);
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_n_samples(dataset: *const AbDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n_samples())
}

/// Number of features, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_n_features(dataset: *const AbDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n_features())
}

/// # Safety
/// `dataset` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ab_dataset_free(dataset: *mut AbDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs one optimizer configuration, given as TOML with the same keys as a
/// `[runs.<name>]` table of an experiment file. Runs that diverge still
/// return `AB_STATUS_OK`; inspect [`ab_trace_status`].
///
/// # Safety
/// `dataset` must be a live handle, `config_toml` a NUL-terminated string
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_run(
    dataset: *const AbDataset,
    config_toml: *const c_char,
    out: *mut *mut AbTrace,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ds = handle(dataset, "dataset")?;
        let text = c_str(config_toml, "config_toml")?;
        let config: RunConfig = toml::from_str(text).map_err(|e| Failure::new(AbStatus::Config, e.to_string()))?;
        let objective = Objective::new(ds.objective, Arc::clone(&ds.data))?;
        let trace = run(&objective, &config)?;
        *out = Box::into_raw(Box::new(AbTrace { trace }));
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_status(trace: *const AbTrace) -> AbRunStatus {
    trace.as_ref().map_or(AbRunStatus::Running, |t| t.trace.status().into())
}

/// Number of recorded rows, or 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_len(trace: *const AbTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.rows.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_row(trace: *const AbTrace, index: usize, out: *mut AbTraceRow) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let t = handle(trace, "trace")?;
        let row = t.trace.rows.get(index).ok_or_else(|| {
            Failure::new(
                AbStatus::InvalidArgument,
                format!("row {index} out of range for {} rows", t.trace.rows.len()),
            )
        })?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = AbTraceRow {
            iter: row.iter,
            samples: row.samples,
            epoch: row.epoch,
            f: nan(row.f),
            grad_norm_full: nan(row.grad_norm_full),
            grad_norm_batch: nan(row.grad_norm_batch),
            step_size: nan(row.step_size),
            batch_size: row.batch_size.unwrap_or(0),
            inner_lhs: nan(row.inner_lhs),
            inner_rhs: nan(row.inner_rhs),
            orth_lhs: nan(row.orth_lhs),
            orth_rhs: nan(row.orth_rhs),
        };
        Ok(())
    })
}

/// Copies the final weights into `out`, which must hold `len` doubles and
/// `len` must equal the dataset dimension.
///
/// # Safety
/// `trace` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_final_weights(trace: *const AbTrace, out: *mut f64, len: usize) -> AbStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let w = &t.trace.final_weights;
        if len != w.len() {
            return Err(Failure::new(
                AbStatus::InvalidArgument,
                format!("buffer holds {len} values, weights have {}", w.len()),
            ));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out, len);
        Ok(())
    })
}

/// Writes the trace CSV to `path`.
///
/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_write_csv(trace: *const AbTrace, path: *const c_char) -> AbStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        let path = c_str(path, "path")?;
        let file = File::create(path).map_err(|e| Failure::new(AbStatus::Io, format!("{path}: {e}")))?;
        t.trace.write_csv(BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ab_trace_free(trace: *mut AbTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// AdaGrad step size `alpha / (beta + accumulated)^(1/2 + tau)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ab_adagrad_step_size(
    alpha: f64,
    beta: f64,
    tau: f64,
    accumulated: f64,
    out: *mut f64,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(accumulated >= 0.0) {
            return Err(Failure::new(AbStatus::InvalidArgument, "accumulated must be >= 0"));
        }
        let mut step = AdaGradStep::new(alpha, beta, tau)?;
        step.accumulate(accumulated);
        *out = step.step_size();
        Ok(())
    })
}

/// Approximated inner-product and orthogonality tests on `batch_size`
/// per-sample gradients stored row-major in `rows` (`batch_size * dim`).
///
/// # Safety
/// `rows` must hold `batch_size * dim` doubles; `config` and `out` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ab_approx_tests(
    rows: *const f64,
    batch_size: usize,
    dim: usize,
    config: *const AbTestConfig,
    out: *mut AbTestVerdict,
) -> AbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let c = handle(config, "config")?;
        if rows.is_null() {
            return Err(null("rows"));
        }
        let len = batch_size
            .checked_mul(dim)
            .ok_or_else(|| Failure::new(AbStatus::InvalidArgument, "batch size overflows"))?;
        let psg = PerSampleGradients::from_rows(std::slice::from_raw_parts(rows, len).to_vec(), dim)?;
        let cfg = TestConfig {
            theta: c.theta,
            nu: c.nu,
            omega: c.omega,
            ..TestConfig::default()
        };
        cfg.validate()?;
        let v = approx_tests(&psg, &cfg)?;
        *out = AbTestVerdict {
            inner_pass: v.inner_pass,
            orth_pass: v.orth_pass,
            recommended_size: v.recommended_size.unwrap_or(0),
            lhs_inner: v.lhs_inner,
            rhs_inner: v.rhs_inner,
            lhs_orth: v.lhs_orth,
            rhs_orth: v.rhs_orth,
        };
        Ok(())
    })
}
