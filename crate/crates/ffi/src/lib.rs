//! C interface to cogvox: model loading and prediction, per-transcript
//! features and the evaluation metrics.
//!
//! Every function returns a [`CvxStatus`]. On failure a message is kept per
//! thread and can be read with [`cvx_last_error`]. Panics never cross the
//! boundary; they are reported as `CVX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cogvox::ensemble::{VoteKind, VotingEnsemble, ENSEMBLE_MAGIC};
use cogvox::eval::{macro_metrics, rmse};
use cogvox::features::{transcript_features, CountingRules, TASK_FEATURES};
use cogvox::learners::{load_model, FeatureMatrix, Matrix, Prediction, TaskKind, MODEL_MAGIC};
use cogvox::transcript::{parse_transcript, Task};

/// Number of values written by [`cvx_transcript_features`].
pub const CVX_TASK_FEATURES: usize = 14;
/// Number of diagnostic classes (HC, MCI, AD).
pub const CVX_N_CLASSES: usize = 3;

const _: () = assert!(CVX_TASK_FEATURES == TASK_FEATURES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Parse = 5,
    Model = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvxTask {
    Ctd = 0,
    Sf = 1,
    Pf = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvxModelTask {
    Classification = 0,
    Regression = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CvxMacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_per_class_avg: f64,
    /// Non-zero when some per-class precision or recall had no denominator.
    pub zero_division: u8,
}

/// Opaque handle to a trained model or voting ensemble.
pub struct CvxModel {
    inner: VotingEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CvxStatus, String);

impl Failure {
    fn new(status: CvxStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

fn set_error(msg: String) {
    // interior NULs would truncate the C string; replace them
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> CvxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CvxStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CvxStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(CvxStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Borrow `len` elements, allowing a null pointer only when `len` is zero.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

fn from_bytes(bytes: &[u8]) -> Result<VotingEnsemble, Failure> {
    if bytes.starts_with(ENSEMBLE_MAGIC) {
        return VotingEnsemble::from_bytes(bytes).map_err(|e| Failure::new(CvxStatus::Model, e));
    }
    if bytes.starts_with(MODEL_MAGIC) {
        let m = load_model(bytes).map_err(|e| Failure::new(CvxStatus::Model, e))?;
        let vote = match m.task() {
            TaskKind::Classification => VoteKind::Soft,
            TaskKind::Regression => VoteKind::RegressorMean,
        };
        return VotingEnsemble::new(vec![m], vote, None).map_err(|e| Failure::new(CvxStatus::Model, e));
    }
    Err(Failure::new(CvxStatus::Model, "not a model or ensemble file"))
}

/// Message for the last failed call on this thread, or null after a
/// successful one. Valid until the next cogvox call on the same thread.
#[no_mangle]
pub extern "C" fn cvx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model (`CVXM`) or ensemble (`CVXE`) from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` to writable storage
/// for one pointer. Free the handle with [`cvx_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cvx_model_load(bytes: *const u8, len: usize, out: *mut *mut CvxModel) -> CvxStatus {
    guard(|| {
        non_null(out, "out")?;
        let data = input(bytes, len, "bytes")?;
        let inner = from_bytes(data)?;
        *out = Box::into_raw(Box::new(CvxModel { inner }));
        Ok(())
    })
}

/// Loads a model or ensemble from a file path.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cvx_model_load_file(path: *const c_char, out: *mut *mut CvxModel) -> CvxStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(path, "path")?;
        let path =
            CStr::from_ptr(path).to_str().map_err(|_| Failure::new(CvxStatus::InvalidUtf8, "path is not UTF-8"))?;
        let data = std::fs::read(path).map_err(|e| Failure::new(CvxStatus::Io, format!("{path}: {e}")))?;
        let inner = from_bytes(&data)?;
        *out = Box::into_raw(Box::new(CvxModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is accepted.
///
/// # Safety
/// `model` must come from a load function and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cvx_model_free(model: *mut CvxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvx_model_task(model: *const CvxModel, out: *mut CvxModelTask) -> CvxStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = match (*model).inner.task() {
            TaskKind::Classification => CvxModelTask::Classification,
            TaskKind::Regression => CvxModelTask::Regression,
        };
        Ok(())
    })
}

/// Number of input columns the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvx_model_n_features(model: *const CvxModel, out: *mut usize) -> CvxStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.columns().len();
        Ok(())
    })
}

/// Predicts for `n_rows` row-major rows of `n_cols` values, in the model's
/// column order.
///
/// Classifiers write `n_rows * CVX_N_CLASSES` class probabilities (a hard
/// vote writes one-hot rows); regressors write `n_rows` MMSE estimates.
/// `out_len` is the capacity of `out` in doubles.
///
/// # Safety
/// `rows` must hold `n_rows * n_cols` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvx_model_predict(
    model: *const CvxModel,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
    out_len: usize,
) -> CvxStatus {
    guard(|| {
        non_null(model, "model")?;
        let ens = &(*model).inner;
        let columns = ens.columns().to_vec();
        if n_cols != columns.len() {
            return Err(Failure::new(
                CvxStatus::InvalidArgument,
                format!("model has {} features, input has {n_cols}", columns.len()),
            ));
        }
        let total = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Failure::new(CvxStatus::InvalidArgument, "row count overflows"))?;
        let width = match ens.task() {
            TaskKind::Classification => CVX_N_CLASSES,
            TaskKind::Regression => 1,
        };
        let needed = n_rows * width;
        if out_len < needed {
            return Err(Failure::new(
                CvxStatus::InvalidArgument,
                format!("output holds {out_len} values, {needed} needed"),
            ));
        }
        let data = input(rows, total, "rows")?.to_vec();
        if needed == 0 {
            return Ok(());
        }
        non_null(out, "out")?;
        let ids = (0..n_rows).map(|i| format!("r{i}")).collect();
        let x = FeatureMatrix::new(ids, columns, Matrix::new(n_rows, n_cols, data))
            .map_err(|e| Failure::new(CvxStatus::InvalidArgument, e))?;
        let pred = ens.predict(&x).map_err(|e| Failure::new(CvxStatus::Model, e))?;
        let dst = slice::from_raw_parts_mut(out, needed);
        match pred {
            Prediction::Probabilities(p) => {
                for (d, r) in dst.chunks_exact_mut(CVX_N_CLASSES).zip(p) {
                    d.copy_from_slice(&r);
                }
            }
            Prediction::Labels(l) => {
                for (d, c) in dst.chunks_exact_mut(CVX_N_CLASSES).zip(l) {
                    d.fill(0.0);
                    d[c] = 1.0;
                }
            }
            Prediction::Values(v) => dst.copy_from_slice(&v),
        }
        Ok(())
    })
}

/// Parses one annotated transcript and writes its fourteen features, in the
/// order of the feature table columns. `task` is a [`CvxTask`] value.
///
/// # Safety
/// `text` must hold `len` bytes and `out` `CVX_TASK_FEATURES` doubles.
#[no_mangle]
pub unsafe extern "C" fn cvx_transcript_features(
    text: *const u8,
    len: usize,
    task: u32,
    duration_seconds: f64,
    out: *mut f64,
) -> CvxStatus {
    guard(|| {
        non_null(out, "out")?;
        let data = input(text, len, "text")?;
        let task = match task {
            0 => Task::Ctd,
            1 => Task::Sf,
            2 => Task::Pf,
            t => return Err(Failure::new(CvxStatus::InvalidArgument, format!("unknown task {t}"))),
        };
        let t = parse_transcript(data, "ffi", task, duration_seconds).map_err(|e| Failure::new(CvxStatus::Parse, e))?;
        let v = transcript_features(&t, &CountingRules::default()).map_err(|e| Failure::new(CvxStatus::Parse, e))?;
        slice::from_raw_parts_mut(out, CVX_TASK_FEATURES).copy_from_slice(v.values());
        Ok(())
    })
}

/// Macro precision, recall and F1 over class indices 0..3.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvx_macro_metrics(
    y_true: *const u32,
    y_pred: *const u32,
    n: usize,
    out: *mut CvxMacroMetrics,
) -> CvxStatus {
    guard(|| {
        non_null(out, "out")?;
        let t: Vec<usize> = input(y_true, n, "y_true")?.iter().map(|&c| c as usize).collect();
        let p: Vec<usize> = input(y_pred, n, "y_pred")?.iter().map(|&c| c as usize).collect();
        let m = macro_metrics(&t, &p).map_err(|e| Failure::new(CvxStatus::InvalidArgument, e))?;
        *out = CvxMacroMetrics {
            precision: m.macro_precision,
            recall: m.macro_recall,
            f1: m.macro_f1,
            f1_per_class_avg: m.macro_f1_per_class_avg,
            zero_division: u8::from(m.zero_division),
        };
        Ok(())
    })
}

/// # Safety
/// `y_true` and `y_pred` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvx_rmse(y_true: *const f64, y_pred: *const f64, n: usize, out: *mut f64) -> CvxStatus {
    guard(|| {
        non_null(out, "out")?;
        let t = input(y_true, n, "y_true")?;
        let p = input(y_pred, n, "y_pred")?;
        *out = rmse(t, p).map_err(|e| Failure::new(CvxStatus::InvalidArgument, e))?;
        Ok(())
    })
}
