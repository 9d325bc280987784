//! C ABI over `prevalens`.
//!
//! Every fallible function returns a [`PrvStatus`]; on failure the message
//! is available from [`prv_last_error`] on the same thread until the next
//! call. Handles are opaque and must be released with their `_free`
//! function. Arrays are passed as pointer plus length; embeddings are
//! row-major `n × dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use prevalens::classifier::ClassifierOutput;
use prevalens::data::Label;
use prevalens::evaluation::{self, Metric};
use prevalens::pipeline::{run_experiment, ExperimentConfig, RunOutcome};
use prevalens::quanet::{build_input, QuaNetModel};
use prevalens::quantifiers::{self, rate_estimates_from, RateEstimates, RateSource};
use prevalens::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    Shape = 4,
    Io = 5,
    Format = 6,
    Parse = 7,
    Internal = 8,
}

/// Classifier rates as estimated on held-out data.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrvRates {
    pub tpr_hard: f64,
    pub fpr_hard: f64,
    pub tpr_soft: f64,
    pub fpr_soft: f64,
}

/// A prevalence estimate and how it was reached.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrvEstimate {
    pub p_positive: f64,
    /// Nonzero when the raw value was clamped into [0, 1].
    pub clipped: i32,
    /// Nonzero when an adjustment fell back to its unadjusted form.
    pub degenerate: i32,
}

/// A loaded QuaNet model.
pub struct PrvQuaNet {
    model: QuaNetModel,
}

/// An experiment configuration and, once run, its outcome.
pub struct PrvExperiment {
    config: ExperimentConfig,
    outcome: Option<RunOutcome>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PrvStatus {
    match e {
        Error::Shape { .. } => PrvStatus::Shape,
        Error::InvalidArgument(_) => PrvStatus::InvalidArgument,
        Error::Parse { .. } => PrvStatus::Parse,
        Error::InsufficientData(_) => PrvStatus::InsufficientData,
        Error::Format(_) => PrvStatus::Format,
        Error::Io(_) | Error::Csv(_) => PrvStatus::Io,
        _ => PrvStatus::Internal,
    }
}

struct Fail(PrvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PrvStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PrvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PrvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrvStatus::Internal
        }
    }
}

unsafe fn array<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(PrvStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn outputs(posteriors: &[f64]) -> Vec<ClassifierOutput> {
    posteriors
        .iter()
        .map(|&p| ClassifierOutput::new(p, Vec::new()))
        .collect()
}

fn to_rates(r: &PrvRates) -> RateEstimates {
    RateEstimates {
        tpr_hard: r.tpr_hard,
        fpr_hard: r.fpr_hard,
        tpr_soft: r.tpr_soft,
        fpr_soft: r.fpr_soft,
        ..RateEstimates::exact(r.tpr_hard, r.fpr_hard)
    }
}

fn write_estimate(dst: &mut PrvEstimate, e: &quantifiers::PrevalenceEstimate) {
    *dst = PrvEstimate {
        p_positive: e.p_positive,
        clipped: e.clipped as i32,
        degenerate: e.degenerate as i32,
    };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn prv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Estimates with one of `cc`, `acc`, `pcc`, `pacc` from posteriors of
/// the positive class. `rates` may be null for `cc` and `pcc`.
///
/// # Safety
/// `method` must be a NUL-terminated string, `posteriors` must point to
/// `n` values, `rates` must be null or valid, `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prv_estimate(
    method: *const c_char,
    posteriors: *const f64,
    n: usize,
    rates: *const PrvRates,
    result: *mut PrvEstimate,
) -> PrvStatus {
    guard(|| {
        let method = string(method, "method")?;
        let out = outputs(array(posteriors, n, "posteriors")?);
        let dst = self::out(result, "result")?;
        let rates = rates.as_ref().map(to_rates);
        let need = || rates.clone().ok_or_else(|| null("rates"));
        let est = match method.as_str() {
            "cc" => quantifiers::cc(&out)?,
            "pcc" => quantifiers::pcc(&out)?,
            "acc" => quantifiers::acc(&out, &need()?)?,
            "pacc" => quantifiers::pacc(&out, &need()?)?,
            other => {
                return Err(Fail(
                    PrvStatus::InvalidArgument,
                    format!("unknown method `{other}` (cc, acc, pcc, pacc)"),
                ))
            }
        };
        write_estimate(dst, &est);
        Ok(())
    })
}

/// Hard and soft rates from held-out posteriors and labels (nonzero =
/// positive).
///
/// # Safety
/// `posteriors` and `labels` must point to `n` values; `result` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn prv_estimate_rates(
    posteriors: *const f64,
    labels: *const i32,
    n: usize,
    result: *mut PrvRates,
) -> PrvStatus {
    guard(|| {
        let out = outputs(array(posteriors, n, "posteriors")?);
        let labels: Vec<Label> = array(labels, n, "labels")?
            .iter()
            .map(|&l| if l != 0 { Label::Positive } else { Label::Negative })
            .collect();
        let dst = self::out(result, "result")?;
        let r = rate_estimates_from(&out, &labels, RateSource::HeldOut)?;
        *dst = PrvRates {
            tpr_hard: r.tpr_hard,
            fpr_hard: r.fpr_hard,
            tpr_soft: r.tpr_soft,
            fpr_soft: r.fpr_soft,
        };
        Ok(())
    })
}

/// EM prior adjustment. `iterations` may be null.
///
/// # Safety
/// `posteriors` must point to `n` values; `result` must be writable;
/// `iterations` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn prv_emq(
    posteriors: *const f64,
    n: usize,
    train_prior: f64,
    max_iter: usize,
    tol: f64,
    result: *mut PrvEstimate,
    iterations: *mut usize,
) -> PrvStatus {
    guard(|| {
        let post = array(posteriors, n, "posteriors")?;
        let dst = self::out(result, "result")?;
        let r = quantifiers::emq(post, train_prior, max_iter, tol)?;
        write_estimate(dst, &r.estimate);
        if let Some(it) = iterations.as_mut() {
            *it = r.iterations;
        }
        Ok(())
    })
}

/// AE, RAE or KLD (`metric` = 0, 1, 2) between two positive-class
/// prevalences, smoothing with `sample_size` where the metric needs it.
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prv_metric(
    metric: i32,
    true_prevalence: f64,
    estimated_prevalence: f64,
    sample_size: usize,
    result: *mut f64,
) -> PrvStatus {
    guard(|| {
        let dst = out(result, "result")?;
        for p in [true_prevalence, estimated_prevalence] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Fail(
                    PrvStatus::InvalidArgument,
                    format!("prevalence {p} outside [0, 1]"),
                ));
            }
        }
        let (t, e) = (
            evaluation::pair(true_prevalence),
            evaluation::pair(estimated_prevalence),
        );
        let m = *Metric::ALL
            .get(usize::try_from(metric).unwrap_or(usize::MAX))
            .ok_or_else(|| Fail(PrvStatus::InvalidArgument, format!("unknown metric {metric}")))?;
        *dst = match m {
            Metric::Ae => evaluation::ae(t, e),
            Metric::Rae => evaluation::rae(t, e, sample_size),
            Metric::Kld => evaluation::kld(t, e, sample_size),
        }
        .value;
        Ok(())
    })
}

/// Two-tailed paired t-test. `degenerate` may be null.
///
/// # Safety
/// `a` and `b` must point to `n` values; `t` and `p_value` must be
/// writable; `degenerate` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn prv_paired_ttest(
    a: *const f64,
    b: *const f64,
    n: usize,
    t: *mut f64,
    p_value: *mut f64,
    degenerate: *mut i32,
) -> PrvStatus {
    guard(|| {
        let r = evaluation::paired_ttest(array(a, n, "a")?, array(b, n, "b")?)?;
        *out(t, "t")? = r.t;
        *out(p_value, "p_value")? = r.p_value;
        if let Some(d) = degenerate.as_mut() {
            *d = r.degenerate as i32;
        }
        Ok(())
    })
}

/// Loads a QuaNet model saved by `prevalens run`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prv_quanet_load(path: *const c_char, handle: *mut *mut PrvQuaNet) -> PrvStatus {
    guard(|| {
        let path = string(path, "path")?;
        let dst = out(handle, "handle")?;
        *dst = ptr::null_mut();
        let model = QuaNetModel::load(PathBuf::from(path))?;
        *dst = Box::into_raw(Box::new(PrvQuaNet { model }));
        Ok(())
    })
}

/// Embedding width the model expects, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or come from [`prv_quanet_load`].
#[no_mangle]
pub unsafe extern "C" fn prv_quanet_embedding_dim(handle: *const PrvQuaNet) -> usize {
    handle.as_ref().map_or(0, |h| h.model.config.embedding_dim)
}

/// Runs QuaNet on one sample of `n` documents.
///
/// # Safety
/// `handle` must come from [`prv_quanet_load`]; `posteriors` must point to
/// `n` values and `embeddings` to `n * dim`; `rates` and `result` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn prv_quanet_estimate(
    handle: *const PrvQuaNet,
    posteriors: *const f64,
    embeddings: *const f64,
    n: usize,
    dim: usize,
    rates: *const PrvRates,
    result: *mut PrvEstimate,
) -> PrvStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let post = array(posteriors, n, "posteriors")?;
        let emb = array(embeddings, n * dim, "embeddings")?;
        let rates = to_rates(rates.as_ref().ok_or_else(|| null("rates"))?);
        let dst = out(result, "result")?;
        let outs: Vec<ClassifierOutput> = post
            .iter()
            .enumerate()
            .map(|(i, &p)| ClassifierOutput::new(p, emb[i * dim..(i + 1) * dim].to_vec()))
            .collect();
        let est = h.model.estimate_input(&build_input(&outs, &rates)?)?;
        write_estimate(dst, &est);
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`prv_quanet_load`], and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn prv_quanet_free(handle: *mut PrvQuaNet) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// A new experiment with default settings, or null on allocation failure.
#[no_mangle]
pub extern "C" fn prv_experiment_new() -> *mut PrvExperiment {
    catch_unwind(|| {
        Box::into_raw(Box::new(PrvExperiment {
            config: ExperimentConfig::default(),
            outcome: None,
        }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Sets one config key, as in a `key: value` config file.
///
/// # Safety
/// `handle` must come from [`prv_experiment_new`]; `key` and `value` must
/// be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn prv_experiment_set(
    handle: *mut PrvExperiment,
    key: *const c_char,
    value: *const c_char,
) -> PrvStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        h.config.set(&string(key, "key")?, &string(value, "value")?)?;
        Ok(())
    })
}

/// Loads a `key: value` config file over the current settings.
///
/// # Safety
/// `handle` must come from [`prv_experiment_new`]; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn prv_experiment_load_config(handle: *mut PrvExperiment, path: *const c_char) -> PrvStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        let path = PathBuf::from(string(path, "path")?);
        let text = std::fs::read_to_string(&path).map_err(Error::from)?;
        h.config.apply_text(&text, &path)?;
        Ok(())
    })
}

/// Runs the whole pipeline, writing to the configured output directory.
/// Nonzero `quiet` silences progress messages on stderr.
///
/// # Safety
/// `handle` must come from [`prv_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn prv_experiment_run(handle: *mut PrvExperiment, quiet: i32) -> PrvStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        h.outcome = None;
        let outcome = run_experiment(&h.config, quiet != 0).map_err(|e| Fail(status_of(&e.error), e.to_string()))?;
        h.outcome = Some(outcome);
        Ok(())
    })
}

/// Mean of `metric` (0 AE, 1 RAE, 2 KLD) for `method` over every seed of
/// the last successful run.
///
/// # Safety
/// `handle` must come from [`prv_experiment_new`]; `method` must be a
/// NUL-terminated string; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prv_experiment_mean_error(
    handle: *const PrvExperiment,
    method: *const c_char,
    metric: i32,
    result: *mut f64,
) -> PrvStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let method = string(method, "method")?;
        let dst = out(result, "result")?;
        let report = &h
            .outcome
            .as_ref()
            .ok_or_else(|| Fail(PrvStatus::InvalidArgument, "experiment has not been run".into()))?
            .report;
        let j = usize::try_from(metric)
            .ok()
            .filter(|&j| j < Metric::ALL.len())
            .ok_or_else(|| Fail(PrvStatus::InvalidArgument, format!("unknown metric {metric}")))?;
        let i = report
            .methods
            .iter()
            .position(|m| *m == method)
            .ok_or_else(|| Fail(PrvStatus::InvalidArgument, format!("method `{method}` was not run")))?;
        *dst = report.means[i][j];
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`prv_experiment_new`], and is
/// invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn prv_experiment_free(handle: *mut PrvExperiment) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
