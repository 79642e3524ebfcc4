//! C ABI for YPose.
//!
//! Models are opaque heap handles created by `ypose_model_build`,
//! `ypose_model_from_spec` or `ypose_checkpoint_load` and released with
//! `ypose_model_free`. Every fallible call returns a [`YposeStatus`]; on failure
//! the message is available from `ypose_last_error` on the same thread.
//! Panics never cross the boundary: they are reported as `YPOSE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ypose::config::KeyValues;
use ypose::data::{Pipeline, Record, LEVELS};
use ypose::model::{count_macs, count_params, load_checkpoint, save_checkpoint};
use ypose::{Error, Model, ModelSpec, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YposeStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string was not UTF-8 or a size argument was out of range.
    InvalidArgument = 2,
    /// Unknown variant or invalid spec text.
    Config = 3,
    /// Malformed or incompatible checkpoint.
    Checkpoint = 4,
    /// File could not be read or written.
    Io = 5,
    /// Image could not be decoded or cropped.
    Image = 6,
    /// Shape mismatch or numeric failure inside the network.
    Tensor = 7,
    /// The caller's output buffer is smaller than required.
    BufferTooSmall = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Opaque network handle.
pub struct YposeModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(YposeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Manifest { .. } | Error::Csv { .. } => YposeStatus::Config,
            Error::Checkpoint(_) => YposeStatus::Checkpoint,
            Error::Io { .. } => YposeStatus::Io,
            Error::Image { .. } | Error::Data(_) => YposeStatus::Image,
            Error::Tensor(_) | Error::NonFiniteLoss { .. } => YposeStatus::Tensor,
        };
        Failure(status, e.to_string())
    }
}

impl From<ypose::TensorError> for Failure {
    fn from(e: ypose::TensorError) -> Self {
        Failure(YposeStatus::Tensor, e.to_string())
    }
}

fn fail<T>(status: YposeStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `body`, records any failure and converts it to a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> YposeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => YposeStatus::Ok,
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
            YposeStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const YposeModel) -> Result<&'a Model, Failure> {
    match model.as_ref() {
        Some(m) => Ok(&m.inner),
        None => fail(YposeStatus::NullPointer, "model handle is NULL"),
    }
}

unsafe fn out_ref<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    match out.as_mut() {
        Some(o) => Ok(o),
        None => fail(YposeStatus::NullPointer, format!("{what} is NULL")),
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return fail(YposeStatus::NullPointer, format!("{what} is NULL"));
    }
    CStr::from_ptr(s).to_str().or_else(|_| fail(YposeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn store_model(out: *mut *mut YposeModel, model: Model) -> Result<(), Failure> {
    let slot = out_ref(out, "output handle pointer")?;
    *slot = Box::into_raw(Box::new(YposeModel { inner: model }));
    Ok(())
}

fn output_len(model: &Model) -> usize {
    model.spec().heads.iter().sum()
}

fn write_probs(model: &Model, images: Tensor, probs: *mut f32, probs_len: usize) -> Result<(), Failure> {
    let batch = images.shape()[0];
    let needed = batch * output_len(model);
    if probs_len < needed {
        return fail(YposeStatus::BufferTooSmall, format!("output holds {probs_len} values, {needed} required"));
    }
    if probs.is_null() {
        return fail(YposeStatus::NullPointer, "output buffer is NULL");
    }
    let out = model.predict(&images)?;
    // SAFETY: the caller guarantees `probs` points to `probs_len >= needed` floats.
    let dst = unsafe { std::slice::from_raw_parts_mut(probs, needed) };
    let mut at = 0;
    for n in 0..batch {
        for head in &out.probs {
            for &p in head.row(n) {
                dst[at] = p as f32;
                at += 1;
            }
        }
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ypose_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call or
/// `ypose_clear_error` on the same thread.
#[no_mangle]
pub extern "C" fn ypose_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Forgets the last error message of this thread.
#[no_mangle]
pub extern "C" fn ypose_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Builds a preset network (`ypose`, `ypose-lite`, `b0`, `b4`, `b5`,
/// `mobilenet-v2` or `toy`) with weights drawn from `seed`.
///
/// # Safety
/// `variant` must be NULL or a NUL-terminated string and `out` must be NULL or
/// writable. On success `*out` owns a handle to release with `ypose_model_free`.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_build(variant: *const c_char, seed: u64, out: *mut *mut YposeModel) -> YposeStatus {
    guard(|| {
        let spec = ModelSpec::preset(str_arg(variant, "variant")?)?;
        store_model(out, Model::build(&spec, seed)?)
    })
}

/// Builds a network from key=value spec text (one `key=value` per line).
/// A `variant` key selects the preset the other keys modify; the default is
/// `ypose`.
///
/// # Safety
/// Same contract as `ypose_model_build`.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_from_spec(spec_text: *const c_char, seed: u64, out: *mut *mut YposeModel) -> YposeStatus {
    guard(|| {
        let kv = KeyValues::parse(str_arg(spec_text, "spec text")?)?;
        let base = ModelSpec::preset(kv.get_str("variant").unwrap_or("ypose"))?;
        let spec = ModelSpec::from_key_values(&kv, &base)?;
        spec.validate()?;
        store_model(out, Model::build(&spec, seed)?)
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_free(model: *mut YposeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable parameter count and the count of non-trainable buffers (BN
/// running statistics). Either output pointer may be NULL.
///
/// # Safety
/// `model` must be a live handle; outputs must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_param_count(model: *const YposeModel, trainable: *mut u64, buffers: *mut u64) -> YposeStatus {
    guard(|| {
        let report = count_params(model_ref(model)?)?;
        if let Some(t) = trainable.as_mut() {
            *t = report.total;
        }
        if let Some(b) = buffers.as_mut() {
            *b = report.buffers;
        }
        Ok(())
    })
}

/// Multiply-accumulates of one forward pass at `input_size`×`input_size`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_mac_count(model: *const YposeModel, input_size: usize, out: *mut u64) -> YposeStatus {
    guard(|| {
        let model = model_ref(model)?;
        if input_size == 0 {
            return fail(YposeStatus::InvalidArgument, "input size must be positive");
        }
        *out_ref(out, "output")? = count_macs(model, input_size)?.total;
        Ok(())
    })
}

/// Side length of the square input the network expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_input_size(model: *const YposeModel, out: *mut usize) -> YposeStatus {
    guard(|| {
        *out_ref(out, "output")? = model_ref(model)?.spec().input_size;
        Ok(())
    })
}

/// Number of classification heads.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_head_count(model: *const YposeModel, out: *mut usize) -> YposeStatus {
    guard(|| {
        *out_ref(out, "output")? = model_ref(model)?.spec().heads.len();
        Ok(())
    })
}

/// Class count of head `head` (0 is the coarsest).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_head_classes(model: *const YposeModel, head: usize, out: *mut usize) -> YposeStatus {
    guard(|| {
        let heads = &model_ref(model)?.spec().heads;
        match heads.get(head) {
            Some(&c) => {
                *out_ref(out, "output")? = c;
                Ok(())
            }
            None => fail(YposeStatus::InvalidArgument, format!("head {head} out of range (model has {})", heads.len())),
        }
    })
}

/// Probabilities written per image: the sum of all head class counts.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_output_len(model: *const YposeModel, out: *mut usize) -> YposeStatus {
    guard(|| {
        *out_ref(out, "output")? = output_len(model_ref(model)?);
        Ok(())
    })
}

/// Eval-mode forward pass on `batch` standardized images in NCHW layout,
/// `batch * 3 * s * s` floats where `s` is the input size. Writes, per image,
/// every head's probabilities concatenated coarse to fine.
///
/// # Safety
/// `images` must point to `batch * 3 * s * s` readable floats and `probs` to
/// `probs_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_predict(model: *const YposeModel, images: *const f32, batch: usize, probs: *mut f32, probs_len: usize) -> YposeStatus {
    guard(|| {
        let model = model_ref(model)?;
        if images.is_null() {
            return fail(YposeStatus::NullPointer, "image buffer is NULL");
        }
        if batch == 0 {
            return fail(YposeStatus::InvalidArgument, "batch must be positive");
        }
        let s = model.spec().input_size;
        let pixels = std::slice::from_raw_parts(images, batch * 3 * s * s);
        let x = Tensor::new(vec![batch, 3, s, s], pixels.iter().map(|&v| v as f64).collect())?;
        write_probs(model, x, probs, probs_len)
    })
}

/// Loads an image file, crops it to the detected person (unless `roi` is false
/// or the image is `synthetic`), standardizes it and runs one forward pass.
/// Output layout matches `ypose_model_predict` with a batch of one.
///
/// # Safety
/// `path` must be a NUL-terminated string and `probs` must point to
/// `probs_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ypose_model_predict_file(
    model: *const YposeModel,
    path: *const c_char,
    synthetic: bool,
    roi: bool,
    probs: *mut f32,
    probs_len: usize,
) -> YposeStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let s = model.spec().input_size;
        let record = Record { path, labels: [0; LEVELS], synthetic };
        let x = Tensor::new(vec![1, 3, s, s], Pipeline::new(s, roi).load(&record)?)?;
        write_probs(model, x, probs, probs_len)
    })
}

/// Writes the model (spec, weights and running statistics) to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ypose_checkpoint_save(model: *const YposeModel, path: *const c_char) -> YposeStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = str_arg(path, "path")?;
        std::fs::write(path, save_checkpoint(model)).map_err(|e| Failure(YposeStatus::Io, format!("{path}: {e}")))
    })
}

/// Rebuilds a model from a checkpoint written by `ypose_checkpoint_save` or the
/// `ypose` command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable. On success `*out`
/// owns a handle to release with `ypose_model_free`.
#[no_mangle]
pub unsafe extern "C" fn ypose_checkpoint_load(path: *const c_char, out: *mut *mut YposeModel) -> YposeStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(YposeStatus::Io, format!("{path}: {e}")))?;
        store_model(out, load_checkpoint(&bytes)?)
    })
}
