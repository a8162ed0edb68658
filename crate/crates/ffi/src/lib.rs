//! C ABI over `msinet`.
//!
//! Every fallible function returns an [`MsinetStatus`]; on failure a
//! human-readable message is available from [`msinet_last_error`] on the same
//! thread. Models are opaque handles created by [`msinet_model_build`] or
//! [`msinet_model_load`] and released with [`msinet_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use msinet::metrics::{accuracy, f1_score, ConfusionCounts};
use msinet::train::{load_checkpoint, save_checkpoint, AdamState, TrainConfig};
use msinet::zoo::forward_classify;
use msinet::{Arch, ArchDescriptor, Error, Model, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsinetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Checkpoint = 5,
    UndefinedMetric = 6,
    Internal = 7,
}

/// Opaque model handle.
pub struct MsinetModel {
    model: Model,
    adam: AdamState,
    config: TrainConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MsinetMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsinetStatus {
    match e {
        Error::Layer { source, .. } => status_of(source),
        Error::InvalidShape { .. } | Error::ShapeMismatch(_) | Error::DegenerateBatch(_) => MsinetStatus::Shape,
        Error::Io(_)
        | Error::MissingFile(_)
        | Error::PpmMagic(_)
        | Error::PpmDimensions { .. }
        | Error::PpmTruncated(_)
        | Error::PpmHeader { .. } => MsinetStatus::Io,
        Error::BadMagic
        | Error::VersionMismatch(_)
        | Error::Truncated
        | Error::CheckpointShape { .. }
        | Error::CheckpointFormat(_) => MsinetStatus::Checkpoint,
        Error::UndefinedMetric(_) => MsinetStatus::UndefinedMetric,
        Error::InvalidSpec(_)
        | Error::InvalidLabel(_)
        | Error::InvalidInput(_)
        | Error::Config(_)
        | Error::ManifestParse { .. }
        | Error::DuplicatePath(_) => MsinetStatus::InvalidArgument,
        _ => MsinetStatus::Internal,
    }
}

struct Failure(MsinetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MsinetStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, records any error or panic, and converts the outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsinetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsinetStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MsinetStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MsinetStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn handle<'a>(p: *mut MsinetModel) -> Result<&'a mut MsinetModel, Failure> {
    p.as_mut().ok_or_else(|| null("model"))
}

/// Message describing the most recent failure on this thread, or null if
/// none. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msinet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialized model. `arch` is one of `modified-resnet`,
/// `resnet18|34|50|101|152`, `logreg`, `ffnn4`, `cnn5`.
///
/// # Safety
/// `arch` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_build(
    arch: *const c_char,
    width_mult: f64,
    input_hw: usize,
    seed: u64,
    out: *mut *mut MsinetModel,
) -> MsinetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let arch: Arch = str_arg(arch, "arch")?.parse()?;
        let model = ArchDescriptor::new(arch, width_mult, input_hw)?.build(seed)?;
        let adam = AdamState::new(&model);
        let config = TrainConfig { seed, ..TrainConfig::default() };
        *out = Box::into_raw(Box::new(MsinetModel { model, adam, config }));
        Ok(())
    })
}

/// Loads a checkpoint written by `msinet train` or [`msinet_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_load(path: *const c_char, out: *mut *mut MsinetModel) -> MsinetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = load_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MsinetModel { model: ck.model, adam: ck.adam, config: ck.config }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_save(model: *mut MsinetModel, path: *const c_char) -> MsinetStatus {
    guard(|| {
        let h = handle(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_checkpoint(&h.model, &h.adam, &h.config, &path)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_free(model: *mut MsinetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square input the model expects.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_input_size(model: *mut MsinetModel, out: *mut usize) -> MsinetStatus {
    guard(|| {
        let h = handle(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let shape = h.model.input_shape().ok_or_else(|| Failure(MsinetStatus::Internal, "model has no input shape".into()))?;
        *out = shape[1];
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_count_weight_layers(model: *mut MsinetModel, out: *mut usize) -> MsinetStatus {
    guard(|| {
        let h = handle(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = h.model.count_weight_layers();
        Ok(())
    })
}

/// Eval-mode MSS probabilities for `n` images laid out as contiguous
/// normalized `[n, 3, hw, hw]` values.
///
/// # Safety
/// `images` must hold `n * 3 * hw * hw` values and `probs` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn msinet_model_predict(
    model: *mut MsinetModel,
    images: *const f64,
    n: usize,
    probs: *mut f64,
) -> MsinetStatus {
    guard(|| {
        let h = handle(model)?;
        if images.is_null() {
            return Err(null("images"));
        }
        if probs.is_null() {
            return Err(null("probs"));
        }
        if n == 0 {
            return Err(Failure(MsinetStatus::InvalidArgument, "n must be >= 1".into()));
        }
        let mut shape = vec![n];
        shape.extend_from_slice(h.model.input_shape().unwrap_or(&[]));
        let len: usize = shape.iter().product();
        let x = Tensor::new(&shape, std::slice::from_raw_parts(images, len).to_vec())?;
        let (p, _) = forward_classify(&mut h.model, &x)?;
        std::slice::from_raw_parts_mut(probs, n).copy_from_slice(p.data());
        Ok(())
    })
}

/// Accuracy, precision, recall and F1 from confusion counts, with class 0
/// (MSI) as the counts' positive class and `positive` (0 or 1) selecting the
/// F1 positive class.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msinet_confmat_metrics(
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
    positive: u8,
    out: *mut MsinetMetrics,
) -> MsinetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if positive > 1 {
            return Err(Failure(MsinetStatus::InvalidArgument, format!("positive class {positive} is not 0 or 1")));
        }
        let c = ConfusionCounts::new(tp, fp, fn_, tn);
        let f = f1_score(&c, positive)?;
        *out = MsinetMetrics { accuracy: accuracy(&c)?, precision: f.precision, recall: f.recall, f1: f.f1 };
        Ok(())
    })
}
