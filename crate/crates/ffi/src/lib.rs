//! C interface to `metaconf`.
//!
//! Datasets and models are opaque handles created by this library and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`MetaconfStatus`]; on failure the message is available from
//! [`metaconf_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary; they are reported as
//! [`MetaconfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use metaconf::checkpoint::Checkpoint;
use metaconf::config::ExperimentConfig;
use metaconf::data::{Dataset, Sample, TaskMode};
use metaconf::metrics::{evaluate, MetricReport};
use metaconf::model::{forward, Architecture, ParamVector};
use metaconf::{datagen, trainer, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaconfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Numerical = 5,
    Io = 6,
    Parse = 7,
    UndefinedMetric = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaconfTaskMode {
    Regression = 0,
    Classification = 1,
}

impl From<MetaconfTaskMode> for TaskMode {
    fn from(m: MetaconfTaskMode) -> Self {
        match m {
            MetaconfTaskMode::Regression => TaskMode::Regression,
            MetaconfTaskMode::Classification => TaskMode::Classification,
        }
    }
}

/// Opaque dataset handle.
pub struct MetaconfDataset(Dataset);

/// Opaque trained-model handle.
pub struct MetaconfModel {
    arch: Architecture,
    params: ParamVector,
}

/// Metric values; a metric is meaningful only when its `has_` flag is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetaconfMetrics {
    pub auroc: f64,
    pub has_auroc: bool,
    pub aupr_error: f64,
    pub has_aupr_error: bool,
    pub aupr_success: f64,
    pub has_aupr_success: bool,
    pub fpr_at_95_tpr: f64,
    pub has_fpr_at_95_tpr: bool,
    pub ause_rmse: f64,
    pub has_ause_rmse: bool,
    pub ause_absrel: f64,
    pub has_ause_absrel: bool,
    pub n_samples: usize,
    pub positive_rate: f64,
}

impl From<&MetricReport> for MetaconfMetrics {
    fn from(r: &MetricReport) -> Self {
        let split = |v: Option<f64>| (v.unwrap_or(f64::NAN), v.is_some());
        let (auroc, has_auroc) = split(r.auroc);
        let (aupr_error, has_aupr_error) = split(r.aupr_error);
        let (aupr_success, has_aupr_success) = split(r.aupr_success);
        let (fpr_at_95_tpr, has_fpr_at_95_tpr) = split(r.fpr_at_95_tpr);
        let (ause_rmse, has_ause_rmse) = split(r.ause_rmse);
        let (ause_absrel, has_ause_absrel) = split(r.ause_absrel);
        Self {
            auroc,
            has_auroc,
            aupr_error,
            has_aupr_error,
            aupr_success,
            has_aupr_success,
            fpr_at_95_tpr,
            has_fpr_at_95_tpr,
            ause_rmse,
            has_ause_rmse,
            ause_absrel,
            has_ause_absrel,
            n_samples: r.n_samples,
            positive_rate: r.positive_rate,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(MetaconfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => MetaconfStatus::Dimension,
            Error::Config(_) => MetaconfStatus::Config,
            Error::Numerical(_) => MetaconfStatus::Numerical,
            Error::UndefinedMetric(_) => MetaconfStatus::UndefinedMetric,
            Error::Parse { .. } | Error::Json(_) => MetaconfStatus::Parse,
            Error::Io { .. } => MetaconfStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MetaconfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MetaconfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MetaconfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MetaconfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MetaconfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Null means defaults.
unsafe fn config_arg(p: *const c_char) -> Result<ExperimentConfig, Failure> {
    if p.is_null() {
        return Ok(ExperimentConfig::default());
    }
    Ok(ExperimentConfig::from_toml(str_arg(p, "config")?)?)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn metaconf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn metaconf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates the synthetic benchmark described by `config_toml` (TOML text,
/// or null for defaults).
///
/// # Safety
/// `config_toml` is null or a NUL-terminated string; `train_out` and
/// `test_out` are valid pointers to writable handle slots.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_generate(
    config_toml: *const c_char,
    train_out: *mut *mut MetaconfDataset,
    test_out: *mut *mut MetaconfDataset,
) -> MetaconfStatus {
    guard(|| {
        out_arg(train_out, "train_out")?;
        out_arg(test_out, "test_out")?;
        let cfg = config_arg(config_toml)?;
        let bench = datagen::generate(&cfg.benchmark)?;
        *train_out = Box::into_raw(Box::new(MetaconfDataset(bench.train)));
        *test_out = Box::into_raw(Box::new(MetaconfDataset(bench.test)));
        Ok(())
    })
}

/// Loads a dataset CSV written by `metaconf datagen`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_load(
    path: *const c_char,
    mode: MetaconfTaskMode,
    out: *mut *mut MetaconfDataset,
) -> MetaconfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let ds = Dataset::load(Path::new(path), mode.into())?;
        *out = Box::into_raw(Box::new(MetaconfDataset(ds)));
        Ok(())
    })
}

/// Builds a dataset from row-major `inputs` (`n × dim`), task predictions and
/// ground truths. `cluster_ids` may be null.
///
/// # Safety
/// Each non-null array holds at least the stated number of elements; `out`
/// is a valid pointer to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_from_arrays(
    inputs: *const f64,
    n: usize,
    dim: usize,
    task_preds: *const f64,
    ground_truths: *const f64,
    cluster_ids: *const usize,
    mode: MetaconfTaskMode,
    out: *mut *mut MetaconfDataset,
) -> MetaconfStatus {
    guard(|| {
        out_arg(out, "out")?;
        if n == 0 || dim == 0 {
            return Err(invalid("n and dim must be positive"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n × dim overflows"))?;
        let inputs = slice_arg(inputs, len, "inputs")?;
        let preds = slice_arg(task_preds, n, "task_preds")?;
        let gts = slice_arg(ground_truths, n, "ground_truths")?;
        let clusters = if cluster_ids.is_null() { None } else { Some(slice_arg(cluster_ids, n, "cluster_ids")?) };
        if inputs.iter().chain(preds).chain(gts).any(|v| !v.is_finite()) {
            return Err(Failure::from(Error::numerical("non-finite dataset value")));
        }
        let mode: TaskMode = mode.into();
        let samples = (0..n)
            .map(|i| {
                let x = inputs[i * dim..(i + 1) * dim].to_vec();
                Sample::new(x, preds[i], gts[i], clusters.map_or(0, |c| c[i]), mode)
            })
            .collect();
        *out = Box::into_raw(Box::new(MetaconfDataset(Dataset::new(mode, samples))));
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_len(ds: *const MetaconfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Input dimension; 0 for a null handle or an empty dataset.
///
/// # Safety
/// `ds` is null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_input_dim(ds: *const MetaconfDataset) -> usize {
    ds.as_ref().and_then(|d| d.0.input_dim()).unwrap_or(0)
}

/// Number of samples whose task prediction is correct; 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_n_correct(ds: *const MetaconfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.samples.iter().filter(|s| s.correct).count())
}

/// # Safety
/// `ds` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn metaconf_dataset_free(ds: *mut MetaconfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a confidence estimator on `train` with the `[model]` and `[train]`
/// sections of `config_toml` (null for defaults).
///
/// # Safety
/// `train` is a live dataset handle; `config_toml` is null or NUL-terminated;
/// `out` is a valid pointer to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_train(
    train: *const MetaconfDataset,
    config_toml: *const c_char,
    out: *mut *mut MetaconfModel,
) -> MetaconfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let ds = &train.as_ref().ok_or_else(|| null("train"))?.0;
        let cfg = config_arg(config_toml)?;
        let input_dim = ds.input_dim().ok_or_else(|| invalid("training set is empty"))?;
        let arch = cfg.model.architecture(input_dim)?;
        let trained = trainer::train(ds, &arch, &cfg.train)?;
        *out = Box::into_raw(Box::new(MetaconfModel {
            arch,
            params: trained.params,
        }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` is NUL-terminated; `out` is a valid pointer to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_load(path: *const c_char, out: *mut *mut MetaconfModel) -> MetaconfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MetaconfModel {
            arch: ck.arch,
            params: ck.params,
        }));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` is a live model handle; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_save(model: *const MetaconfModel, path: *const c_char) -> MetaconfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ck = Checkpoint::new(m.arch.clone(), m.params.clone())?;
        ck.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Input dimension the model expects; 0 for a null handle.
///
/// # Safety
/// `model` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_input_dim(model: *const MetaconfModel) -> usize {
    model.as_ref().map_or(0, |m| m.arch.input_dim)
}

/// Number of parameters; 0 for a null handle.
///
/// # Safety
/// `model` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_param_count(model: *const MetaconfModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.len())
}

/// Confidence scores in (0, 1) for `n` row-major inputs of width `dim`.
///
/// # Safety
/// `model` is a live model handle; `inputs` holds `n × dim` values and
/// `scores_out` has room for `n`.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_score(
    model: *const MetaconfModel,
    inputs: *const f64,
    n: usize,
    dim: usize,
    scores_out: *mut f64,
) -> MetaconfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if dim != m.arch.input_dim {
            return Err(Failure::from(Error::Dimension {
                what: "input width vs model",
                expected: m.arch.input_dim,
                got: dim,
            }));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n × dim overflows"))?;
        let inputs = slice_arg(inputs, len, "inputs")?;
        if n > 0 {
            out_arg(scores_out, "scores_out")?;
        }
        let scores = (0..n)
            .map(|i| forward(&m.params, &m.arch, &inputs[i * dim..(i + 1) * dim]))
            .collect::<Result<Vec<f64>, Error>>()?;
        if n > 0 {
            ptr::copy_nonoverlapping(scores.as_ptr(), scores_out, n);
        }
        Ok(())
    })
}

/// Computes all metrics of `model` on `ds`.
///
/// # Safety
/// `model` and `ds` are live handles; `out` points to writable memory.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_evaluate(
    model: *const MetaconfModel,
    ds: *const MetaconfDataset,
    out: *mut MetaconfMetrics,
) -> MetaconfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.0;
        let report = evaluate(&m.params, &m.arch, ds)?;
        *out = MetaconfMetrics::from(&report);
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn metaconf_model_free(model: *mut MetaconfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
