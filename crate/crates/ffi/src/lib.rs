//! C ABI for the hlearn meta-learners.
//!
//! Datasets and estimators are opaque handles. Constructors write a handle
//! through an out-pointer and return an [`HlStatus`]; each handle is released
//! with its matching `*_free` function. After a failed call,
//! [`hl_last_error`] returns a message describing the failure on the calling
//! thread. Matrices are dense, row-major `n x d` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hlearn::config::{LearnerSpec, ModelSettings};
use hlearn::data::{load_csv, CsvSchema, Dataset, GroundTruth};
use hlearn::eval::pehe_values;
use hlearn::experiment::fit_learner;
use hlearn::metalearners::{CateEstimator, TrainedModel};
use hlearn::pseudo::PseudoKind;
use hlearn::Error;
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Deserialize;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Positivity = 5,
    Numerical = 6,
    Io = 7,
    Internal = 8,
    Panic = 9,
}

/// Covariates, treatments, outcomes and optional potential-outcome means.
pub struct HlDataset {
    data: Dataset,
    truth: Option<GroundTruth>,
}

/// A fitted CATE estimator.
pub struct HlEstimator {
    model: TrainedModel,
    lambda: Option<f64>,
    learner: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> HlStatus {
    match err {
        Error::Config(_) | Error::Json(_) => HlStatus::Config,
        Error::Schema(_)
        | Error::InvalidRow { .. }
        | Error::Validation(_)
        | Error::Dimension { .. }
        | Error::Csv(_) => HlStatus::Data,
        Error::Positivity(_) => HlStatus::Positivity,
        Error::Divergence { .. } => HlStatus::Numerical,
        Error::Io { .. } => HlStatus::Io,
        Error::Invariant(_) => HlStatus::Internal,
    }
}

struct Failure(HlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(HlStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HlStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            HlStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix<'a>(x: *const f64, n: usize, d: usize) -> Result<ArrayView2<'a, f64>, Failure> {
    let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
    let values = slice(x, len, "x")?;
    ArrayView2::from_shape((n, d), values).map_err(|e| invalid(e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from a row-major `n x d` covariate matrix, `n` treatment
/// indicators (0 or 1) and `n` outcomes.
///
/// # Safety
/// `x` must point to `n * d` doubles, `t` to `n` bytes and `y` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    t: *const u8,
    y: *const f64,
    out: *mut *mut HlDataset,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let x = matrix(x, n, d)?.to_owned();
        let t = slice(t, n, "t")?.to_vec();
        let y = Array1::from(slice(y, n, "y")?.to_vec());
        let data = Dataset::new(x, t, y)?;
        *out = Box::into_raw(Box::new(HlDataset { data, truth: None }));
        Ok(())
    })
}

/// Attaches true potential-outcome means so PEHE can be computed.
///
/// # Safety
/// `dataset` must be a live handle; `mu0` and `mu1` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_set_truth(dataset: *mut HlDataset, mu0: *const f64, mu1: *const f64) -> HlStatus {
    guard(|| {
        let ds = dataset.as_mut().ok_or_else(|| null("dataset"))?;
        let n = ds.data.n();
        let mu0 = Array1::from(slice(mu0, n, "mu0")?.to_vec());
        let mu1 = Array1::from(slice(mu1, n, "mu1")?.to_vec());
        ds.truth = Some(GroundTruth::new(mu0, mu1)?);
        Ok(())
    })
}

/// Reads a headered CSV with columns `t`, `y`, optional `mu0`/`mu1`, and
/// every other column as a feature.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_load_csv(path: *const c_char, out: *mut *mut HlDataset) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (data, truth) = load_csv(path_arg(path)?, &CsvSchema::default())?;
        *out = Box::into_raw(Box::new(HlDataset { data, truth }));
        Ok(())
    })
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_rows(dataset: *const HlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n())
}

/// Number of covariates, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_cols(dataset: *const HlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.d())
}

/// Writes the true CATE of every row into `out_tau` (`n` doubles).
///
/// # Safety
/// `dataset` must be a live handle; `out_tau` must have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_true_tau(dataset: *const HlDataset, out_tau: *mut f64) -> HlStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let truth = ds.truth.as_ref().ok_or_else(|| invalid("dataset has no ground truth"))?;
        if out_tau.is_null() {
            return Err(null("out_tau"));
        }
        std::slice::from_raw_parts_mut(out_tau, truth.len()).copy_from_slice(truth.tau.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_dataset_free(dataset: *mut HlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    learner: LearnerSpec,
    #[serde(default)]
    settings: ModelSettings,
}

impl Default for FitRequest {
    fn default() -> Self {
        Self {
            learner: LearnerSpec::HLearner {
                pseudo: PseudoKind::X,
                lambda: None,
                zero_pseudo: false,
                base: Default::default(),
            },
            settings: ModelSettings::default(),
        }
    }
}

/// Fits a learner on `train`, checkpointing and selecting lambda on `val`.
///
/// `config_json` is `{"learner": {...}, "settings": {...}}`, where
/// `learner` uses the same keys as a `[[learners]]` entry of an experiment
/// file and `settings` holds `network`, `ridge`, `stage1`, `lambda_grid`,
/// `standardize_features` and `standardize_outcome`. NULL selects an
/// H-learner with X pseudo-outcomes and default settings.
///
/// # Safety
/// `train` and `val` must be live handles; `config_json` must be NULL or a
/// NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_fit(
    train: *const HlDataset,
    val: *const HlDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut HlEstimator,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let train = train.as_ref().ok_or_else(|| null("train"))?;
        let val = val.as_ref().ok_or_else(|| null("val"))?;
        let request = if config_json.is_null() {
            FitRequest::default()
        } else {
            let text = CStr::from_ptr(config_json).to_str().map_err(|_| invalid("config_json is not valid UTF-8"))?;
            serde_json::from_str(text).map_err(|e| Failure(HlStatus::Config, format!("config_json: {e}")))?
        };
        let fit = fit_learner(&request.settings, &request.learner, &train.data, &val.data, seed)?;
        *out = Box::into_raw(Box::new(estimator(fit.model, fit.lambda)));
        Ok(())
    })
}

fn estimator(model: TrainedModel, lambda: Option<f64>) -> HlEstimator {
    let learner = CString::new(model.learner.replace('\0', " ")).expect("NUL removed");
    HlEstimator { model, lambda, learner }
}

unsafe fn predict_into(
    est: *const HlEstimator,
    x: *const f64,
    n: usize,
    d: usize,
    f: impl FnOnce(&TrainedModel, ArrayView2<f64>) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let est = est.as_ref().ok_or_else(|| null("estimator"))?;
    let x = matrix(x, n, d)?;
    f(&est.model, x)
}

unsafe fn write(out: *mut f64, values: &Array1<f64>, what: &str) -> Result<(), Failure> {
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values.as_slice().expect("contiguous"));
    Ok(())
}

/// Predicts `tau(x)` for `n` rows of `d` raw covariates into `out_tau`.
///
/// # Safety
/// `estimator` must be a live handle; `x` must point to `n * d` doubles and
/// `out_tau` to room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_predict_tau(
    estimator: *const HlEstimator,
    x: *const f64,
    n: usize,
    d: usize,
    out_tau: *mut f64,
) -> HlStatus {
    guard(|| {
        predict_into(estimator, x, n, d, |m, x| {
            let tau = m.predict_tau(x)?;
            write(out_tau, &tau, "out_tau")
        })
    })
}

/// Predicts both outcome heads. Fails with `HL_STATUS_INVALID_ARGUMENT` for
/// estimators that only model the effect (direct learners).
///
/// # Safety
/// As for [`hl_estimator_predict_tau`], with `out_mu0` and `out_mu1` each
/// holding `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_predict_outcomes(
    estimator: *const HlEstimator,
    x: *const f64,
    n: usize,
    d: usize,
    out_mu0: *mut f64,
    out_mu1: *mut f64,
) -> HlStatus {
    guard(|| {
        predict_into(estimator, x, n, d, |m, x| match (m.predict_mu0(x)?, m.predict_mu1(x)?) {
            (Some(m0), Some(m1)) => {
                write(out_mu0, &m0, "out_mu0")?;
                write(out_mu1, &m1, "out_mu1")
            }
            _ => Err(invalid(format!("{} has no outcome heads", m.learner))),
        })
    })
}

/// Chosen (or fixed) lambda of an H-learner; NaN for other learners and NULL.
///
/// # Safety
/// `estimator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_lambda(estimator: *const HlEstimator) -> f64 {
    estimator.as_ref().and_then(|e| e.lambda).unwrap_or(f64::NAN)
}

/// Learner identifier, valid while the handle lives; NULL for NULL.
///
/// # Safety
/// `estimator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_learner(estimator: *const HlEstimator) -> *const c_char {
    estimator.as_ref().map_or(ptr::null(), |e| e.learner.as_ptr())
}

/// Saves the estimator (with its standardization) as JSON.
///
/// # Safety
/// `estimator` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_save(estimator: *const HlEstimator, path: *const c_char) -> HlStatus {
    guard(|| {
        let est = estimator.as_ref().ok_or_else(|| null("estimator"))?;
        est.model.save_json(path_arg(path)?)?;
        Ok(())
    })
}

/// Loads an estimator saved by [`hl_estimator_save`] or `hlearn fit`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_load(path: *const c_char, out: *mut *mut HlEstimator) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = TrainedModel::load_json(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(estimator(model, None)));
        Ok(())
    })
}

/// # Safety
/// `estimator` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_free(estimator: *mut HlEstimator) {
    if !estimator.is_null() {
        drop(Box::from_raw(estimator));
    }
}

/// Mean squared CATE error and its square root over `n` rows.
///
/// # Safety
/// `tau_hat` and `tau` must point to `n` doubles; the out-pointers may be
/// NULL when a value is not needed.
#[no_mangle]
pub unsafe extern "C" fn hl_pehe(
    tau_hat: *const f64,
    tau: *const f64,
    n: usize,
    out_eps: *mut f64,
    out_root: *mut f64,
) -> HlStatus {
    guard(|| {
        let a = ArrayView1::from(slice(tau_hat, n, "tau_hat")?);
        let b = ArrayView1::from(slice(tau, n, "tau")?);
        let p = pehe_values(a, b)?;
        if let Some(e) = out_eps.as_mut() {
            *e = p.eps;
        }
        if let Some(r) = out_root.as_mut() {
            *r = p.root;
        }
        Ok(())
    })
}

/// Root-PEHE of `estimator` on a dataset with ground truth.
///
/// # Safety
/// Both handles must be live; `out_root` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_estimator_pehe(
    estimator: *const HlEstimator,
    dataset: *const HlDataset,
    out_root: *mut f64,
) -> HlStatus {
    guard(|| {
        let est = estimator.as_ref().ok_or_else(|| null("estimator"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out_ptr(out_root, "out_root")?;
        let truth = ds.truth.as_ref().ok_or_else(|| invalid("dataset has no ground truth"))?;
        let tau_hat = est.model.predict_tau(ds.data.x.view())?;
        *out = pehe_values(tau_hat.view(), truth.tau.view())?.root;
        Ok(())
    })
}
