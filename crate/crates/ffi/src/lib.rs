//! C ABI over the `misgrad` library.
//!
//! Objects are exposed as opaque handles created by `*_new` functions and
//! released by the matching `*_free`. Every fallible call returns a
//! [`MisgradStatus`]; on failure, [`misgrad_last_error`] describes the cause
//! for the calling thread. Output parameters are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use misgrad::config::parse_config_str;
use misgrad::estimator::{balance_weights, MisSystem};
use misgrad::experiment::{build_task, make_trainer};
use misgrad::importance::DiscretePdf;
use misgrad::linalg::{solve_regularized, Mat, Rng};
use misgrad::metric::cross_entropy_importance;
use misgrad::net::SampleGrad;
use misgrad::train::{EpochLog, Trainer};
use misgrad::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisgradStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Lengths, indices or counts are inconsistent.
    InvalidArgument = 3,
    /// The configuration could not be parsed.
    ConfigParse = 4,
    /// The configuration parsed but violates a constraint.
    ConfigInvalid = 5,
    /// Importance values or probabilities are unusable (negative, non-finite, all zero).
    InvalidImportance = 6,
    /// A linear system could not be solved.
    SingularSystem = 7,
    /// A non-finite value appeared during training.
    NonFinite = 8,
    /// Reading or writing files failed, or an input file is malformed.
    Io = 9,
    /// Any other library error.
    Failed = 10,
    /// The library panicked; the handle involved should be freed.
    Panic = 11,
}

/// One epoch's log record.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MisgradEpochLog {
    pub epoch: u64,
    pub steps: u64,
    /// Cumulative training time in milliseconds.
    pub wall_ms: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    /// Classification error rate, NaN for regression.
    pub eval_error: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub ridge: f64,
    pub condition: f64,
    pub biased: bool,
}

impl From<&EpochLog> for MisgradEpochLog {
    fn from(l: &EpochLog) -> Self {
        MisgradEpochLog {
            epoch: l.epoch as u64,
            steps: l.steps as u64,
            wall_ms: l.wall_ms,
            train_loss: l.train_loss,
            eval_loss: l.eval_loss,
            eval_error: l.eval_error,
            min_weight: l.min_weight,
            max_weight: l.max_weight,
            ridge: l.ridge,
            condition: l.condition,
            biased: l.biased,
        }
    }
}

/// Opaque trainer handle.
pub struct MisgradTrainer {
    trainer: Trainer,
}

/// Opaque discrete distribution handle.
pub struct MisgradPdf {
    pdf: DiscretePdf,
}

/// Opaque handle for the momentum-accumulated OMIS linear system.
pub struct MisgradMisSystem {
    system: MisSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> MisgradStatus {
    match err.root() {
        Error::ConfigParse { .. } => MisgradStatus::ConfigParse,
        Error::ConfigInvalid(_) | Error::TaskMismatch(..) => MisgradStatus::ConfigInvalid,
        Error::NonFiniteImportance(_)
        | Error::NegativeImportance(_)
        | Error::AllZeroImportance
        | Error::ZeroProbabilitySample(_)
        | Error::AllTechniquesZero(_) => MisgradStatus::InvalidImportance,
        Error::SingularSystem { .. } => MisgradStatus::SingularSystem,
        Error::NonFiniteInput(_) | Error::NonFiniteGradient(_) => MisgradStatus::NonFinite,
        Error::ShapeMismatch { .. } | Error::IndexOutOfRange { .. } | Error::InvalidTarget { .. } | Error::EmptySubset => {
            MisgradStatus::InvalidArgument
        }
        Error::Io(_)
        | Error::MalformedImage(_)
        | Error::UnsupportedFormat(_)
        | Error::MalformedIdx(_)
        | Error::LabelImageCountMismatch { .. }
        | Error::MalformedMetrics { .. }
        | Error::MalformedCheckpoint(_) => MisgradStatus::Io,
        _ => MisgradStatus::Failed,
    }
}

struct Fail(MisgradStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        Fail(status_of(&e), msg)
    }
}

fn fail(status: MisgradStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Run `body`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Fail>>(body: F) -> MisgradStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MisgradStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("panic: {msg}"));
            MisgradStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(MisgradStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MisgradStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn pdf_list(pdfs: *const *const MisgradPdf, count: usize) -> Result<Vec<DiscretePdf>, Fail> {
    in_slice(pdfs, count, "pdfs")?
        .iter()
        .map(|&p| {
            non_null(p, "pdfs[j]")?;
            Ok((*p).pdf.clone())
        })
        .collect()
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn misgrad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn misgrad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Trainer

/// Build a trainer from a flat JSON run configuration. Generated task data
/// (synthetic images, IDX files) is written under `scratch_dir`.
///
/// # Safety
/// `config_json` and `scratch_dir` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_new(
    config_json: *const c_char,
    scratch_dir: *const c_char,
    out: *mut *mut MisgradTrainer,
) -> MisgradStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = parse_config_str(c_str(config_json, "config_json")?)?;
        let scratch = c_str(scratch_dir, "scratch_dir")?;
        let setup = build_task(&cfg, Path::new(scratch))?;
        let trainer = make_trainer(&cfg, &setup)?;
        *out = Box::into_raw(Box::new(MisgradTrainer { trainer }));
        Ok(())
    })
}

/// # Safety
/// `trainer` must come from [`misgrad_trainer_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_free(trainer: *mut MisgradTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Train one epoch and report its log record.
///
/// # Safety
/// `trainer` must be a live handle; `log` may be null.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_run_epoch(
    trainer: *mut MisgradTrainer,
    log: *mut MisgradEpochLog,
) -> MisgradStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let l = (*trainer).trainer.run_epoch()?;
        if !log.is_null() {
            *log = MisgradEpochLog::from(&l);
        }
        Ok(())
    })
}

/// Number of epochs completed so far.
///
/// # Safety
/// `trainer` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_epochs_done(trainer: *const MisgradTrainer) -> usize {
    if trainer.is_null() {
        0
    } else {
        (*trainer).trainer.epochs_done()
    }
}

/// Number of network parameters, or 0 for a null handle.
///
/// # Safety
/// `trainer` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_param_count(trainer: *const MisgradTrainer) -> usize {
    if trainer.is_null() {
        0
    } else {
        (*trainer).trainer.network().param_count()
    }
}

/// Copy the flattened parameters into `buf`, which must hold exactly
/// [`misgrad_trainer_param_count`] values.
///
/// # Safety
/// `trainer` must be a live handle; `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_params(
    trainer: *const MisgradTrainer,
    buf: *mut f64,
    len: usize,
) -> MisgradStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let params = (*trainer).trainer.network().params();
        if len != params.len() {
            return Err(fail(
                MisgradStatus::InvalidArgument,
                format!("buffer holds {len} values, network has {}", params.len()),
            ));
        }
        out_slice(buf, len, "buf")?.copy_from_slice(params);
        Ok(())
    })
}

/// Evaluate the network on one input vector, writing `out_len` outputs.
///
/// # Safety
/// `trainer` must be a live handle; `x` readable for `x_len` doubles and
/// `out` writable for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn misgrad_trainer_predict(
    trainer: *const MisgradTrainer,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MisgradStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let y = (*trainer).trainer.network().forward(in_slice(x, x_len, "x")?)?;
        if y.len() != out_len {
            return Err(fail(
                MisgradStatus::InvalidArgument,
                format!("output buffer holds {out_len} values, network emits {}", y.len()),
            ));
        }
        out_slice(out, out_len, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Discrete distributions

/// Normalize non-negative weights into a distribution.
///
/// # Safety
/// `weights` must be readable for `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_new(weights: *const f64, len: usize, out: *mut *mut MisgradPdf) -> MisgradStatus {
    guard(|| {
        non_null(out, "out")?;
        let pdf = DiscretePdf::from_weights(in_slice(weights, len, "weights")?)?;
        *out = Box::into_raw(Box::new(MisgradPdf { pdf }));
        Ok(())
    })
}

/// Uniform distribution over `len` items.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_uniform(len: usize, out: *mut *mut MisgradPdf) -> MisgradStatus {
    guard(|| {
        non_null(out, "out")?;
        if len == 0 {
            return Err(fail(MisgradStatus::InvalidArgument, "uniform pdf needs at least one item"));
        }
        *out = Box::into_raw(Box::new(MisgradPdf {
            pdf: DiscretePdf::uniform(len),
        }));
        Ok(())
    })
}

/// # Safety
/// `pdf` must come from a `misgrad_pdf_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_free(pdf: *mut MisgradPdf) {
    if !pdf.is_null() {
        drop(Box::from_raw(pdf));
    }
}

/// Number of items, or 0 for a null handle.
///
/// # Safety
/// `pdf` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_len(pdf: *const MisgradPdf) -> usize {
    if pdf.is_null() {
        0
    } else {
        (*pdf).pdf.len()
    }
}

/// Probability of item `index`.
///
/// # Safety
/// `pdf` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_prob(pdf: *const MisgradPdf, index: usize, out: *mut f64) -> MisgradStatus {
    guard(|| {
        non_null(pdf, "pdf")?;
        non_null(out, "out")?;
        let p = &(*pdf).pdf;
        if index >= p.len() {
            return Err(Error::IndexOutOfRange { index, len: p.len() }.into());
        }
        *out = p.prob(index);
        Ok(())
    })
}

/// Draw `count` indices with replacement using a generator seeded by `seed`.
/// The same seed always yields the same draws.
///
/// # Safety
/// `pdf` must be a live handle; `out` must be writable for `count` values.
#[no_mangle]
pub unsafe extern "C" fn misgrad_pdf_sample(
    pdf: *const MisgradPdf,
    seed: u64,
    count: usize,
    out: *mut usize,
) -> MisgradStatus {
    guard(|| {
        non_null(pdf, "pdf")?;
        let mut rng = Rng::new(seed);
        let draws = (*pdf).pdf.sample_with_replacement(count, &mut rng);
        out_slice(out, count, "out")?.copy_from_slice(&draws);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// OMIS linear system

/// Create an empty system for `techniques` pdfs with per-technique sample
/// counts `counts`, integrands of dimension `dim`, and momentum `beta`.
///
/// # Safety
/// `counts` must be readable for `techniques` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_mis_new(
    counts: *const usize,
    techniques: usize,
    dim: usize,
    beta: f64,
    out: *mut *mut MisgradMisSystem,
) -> MisgradStatus {
    guard(|| {
        non_null(out, "out")?;
        let counts = in_slice(counts, techniques, "counts")?.to_vec();
        let system = MisSystem::new(counts, dim, beta)?;
        *out = Box::into_raw(Box::new(MisgradMisSystem { system }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from [`misgrad_mis_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn misgrad_mis_free(system: *mut MisgradMisSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Start a new mini-batch: scale the accumulated system by `beta`.
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn misgrad_mis_decay(system: *mut MisgradMisSystem) -> MisgradStatus {
    guard(|| {
        non_null(system, "system")?;
        (*system).system.decay();
        Ok(())
    })
}

/// Add one drawn sample (data index `index`, integrand `value` of length
/// `dim`) given the current technique pdfs.
///
/// # Safety
/// `system` must be a live handle; `value` readable for `dim` doubles;
/// `pdfs` readable for `techniques` live pdf handles.
#[no_mangle]
pub unsafe extern "C" fn misgrad_mis_add_sample(
    system: *mut MisgradMisSystem,
    index: usize,
    value: *const f64,
    dim: usize,
    pdfs: *const *const MisgradPdf,
    techniques: usize,
) -> MisgradStatus {
    guard(|| {
        non_null(system, "system")?;
        let pdfs = pdf_list(pdfs, techniques)?;
        let sample = SampleGrad {
            index,
            loss: 0.0,
            param_grad: in_slice(value, dim, "value")?.to_vec(),
            output: Vec::new(),
            output_grad: Vec::new(),
        };
        (*system).system.add_sample(&sample, &pdfs)?;
        Ok(())
    })
}

/// Solve the system with relative ridge `ridge` and write the estimate of
/// the integral (length `dim`).
///
/// # Safety
/// `system` must be a live handle; `out` writable for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn misgrad_mis_estimate(
    system: *const MisgradMisSystem,
    ridge: f64,
    out: *mut f64,
    dim: usize,
) -> MisgradStatus {
    guard(|| {
        non_null(system, "system")?;
        let est = (*system).system.estimate(ridge)?;
        if est.grad.len() != dim {
            return Err(fail(
                MisgradStatus::InvalidArgument,
                format!("output holds {dim} values, system dimension is {}", est.grad.len()),
            ));
        }
        out_slice(out, dim, "out")?.copy_from_slice(&est.grad);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Stateless helpers

/// Solve `(A + ridge·I) x = b` for a symmetric positive semi-definite
/// row-major `n`×`n` matrix `A`.
///
/// # Safety
/// `a` readable for `n*n` doubles; `b` readable and `x` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn misgrad_solve_regularized(
    a: *const f64,
    b: *const f64,
    n: usize,
    ridge: f64,
    x: *mut f64,
) -> MisgradStatus {
    guard(|| {
        let a_vals = in_slice(a, n * n, "a")?.to_vec();
        let mat = Mat::from_vec(n, n, a_vals)?;
        let sol = solve_regularized(&mat, in_slice(b, n, "b")?, ridge)?;
        out_slice(x, n, "x")?.copy_from_slice(&sol);
        Ok(())
    })
}

/// Balance-heuristic weights `n_j p_j(x) / Σ_k n_k p_k(x)` of data index
/// `index` for each of `techniques` pdfs.
///
/// # Safety
/// `pdfs` readable for `techniques` live handles; `counts` readable and
/// `out` writable for `techniques` values.
#[no_mangle]
pub unsafe extern "C" fn misgrad_balance_weights(
    index: usize,
    pdfs: *const *const MisgradPdf,
    counts: *const usize,
    techniques: usize,
    out: *mut f64,
) -> MisgradStatus {
    guard(|| {
        let pdfs = pdf_list(pdfs, techniques)?;
        let counts = in_slice(counts, techniques, "counts")?;
        let w = balance_weights(index, &pdfs, counts)?;
        out_slice(out, techniques, "out")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Closed-form softmax cross-entropy importance `‖softmax(z) − onehot(class)‖`.
///
/// # Safety
/// `logits` readable for `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn misgrad_cross_entropy_importance(
    logits: *const f64,
    len: usize,
    class: usize,
    out: *mut f64,
) -> MisgradStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = cross_entropy_importance(in_slice(logits, len, "logits")?, class)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_is_reported() {
        let w = [1.0, 2.0];
        let s = unsafe { misgrad_pdf_new(w.as_ptr(), 2, ptr::null_mut()) };
        assert_eq!(s, MisgradStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(misgrad_last_error()) }.to_str().unwrap();
        assert!(msg.contains("out"));
    }

    #[test]
    fn non_finite_weights_map_to_invalid_importance() {
        let w = [1.0, f64::NAN];
        let mut p = ptr::null_mut();
        let s = unsafe { misgrad_pdf_new(w.as_ptr(), 2, &mut p) };
        assert_eq!(s, MisgradStatus::InvalidImportance);
        assert!(p.is_null());
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(misgrad_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
