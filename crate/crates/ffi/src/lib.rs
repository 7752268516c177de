//! C ABI over `stnet`.
//!
//! Every fallible function returns an `int32_t` status: `STNET_OK` (0) or
//! the error category code. The message of the most recent failure on the
//! calling thread is available from [`stnet_last_error`]. Models are opaque
//! `StnetModel` handles owned by the caller and released with
//! [`stnet_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stnet::models::{load_checkpoint, save_checkpoint, CheckpointMeta, Model, ModelConfig, Variant};
use stnet::tensor::Tensor;
use stnet::Error;

pub const STNET_OK: i32 = 0;
/// A Rust panic was caught at the boundary.
pub const STNET_ERR_INTERNAL: i32 = 1;
pub const STNET_ERR_SHAPE: i32 = 2;
pub const STNET_ERR_NUMERIC_INPUT: i32 = 3;
pub const STNET_ERR_ORACLE: i32 = 4;
pub const STNET_ERR_CONFIG: i32 = 5;
pub const STNET_ERR_USAGE: i32 = 6;
pub const STNET_ERR_FORMAT: i32 = 7;
pub const STNET_ERR_INTEGRITY: i32 = 8;
pub const STNET_ERR_IMPORT: i32 = 9;
pub const STNET_ERR_LABEL: i32 = 10;
pub const STNET_ERR_EMPTY_CLIP: i32 = 11;
pub const STNET_ERR_STRATIFICATION: i32 = 12;
pub const STNET_ERR_DATA: i32 = 13;
pub const STNET_ERR_DIVERGENCE: i32 = 14;
pub const STNET_ERR_INSUFFICIENT_FRAMES: i32 = 15;
pub const STNET_ERR_IO: i32 = 16;

/// Reduced 16×24×24×3 configuration.
pub const STNET_PRESET_DESK: i32 = 0;
/// Full-size 25×90×90×3 configuration.
pub const STNET_PRESET_FULL: i32 = 1;

/// Opaque classifier handle.
pub struct StnetModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(err: Error) -> i32 {
    let code = err.category().code();
    set_last_error(format!("{}: {err}", err.category()));
    code
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            STNET_OK
        }
        Ok(Err(e)) => fail(e),
        Err(_) => {
            set_last_error("internal: panic inside stnet".into());
            STNET_ERR_INTERNAL
        }
    }
}

fn usage(msg: &str) -> Error {
    Error::Usage(msg.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(usage(&format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| usage(&format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(m: *const StnetModel) -> Result<&'a StnetModel, Error> {
    m.as_ref().ok_or_else(|| usage("model handle is NULL"))
}

fn publish(out: *mut *mut StnetModel, model: Model<f32>) -> Result<(), Error> {
    if out.is_null() {
        return Err(usage("output handle pointer is NULL"));
    }
    let handle = Box::into_raw(Box::new(StnetModel { inner: model }));
    unsafe { *out = handle };
    Ok(())
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next stnet call on the same thread.
#[no_mangle]
pub extern "C" fn stnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code, e.g. `"integrity"`.
#[no_mangle]
pub extern "C" fn stnet_status_name(code: i32) -> *const c_char {
    let name: &'static CStr = match code {
        STNET_OK => c"ok",
        STNET_ERR_INTERNAL => c"internal",
        STNET_ERR_SHAPE => c"shape",
        STNET_ERR_NUMERIC_INPUT => c"numeric-input",
        STNET_ERR_ORACLE => c"oracle",
        STNET_ERR_CONFIG => c"config",
        STNET_ERR_USAGE => c"usage",
        STNET_ERR_FORMAT => c"format",
        STNET_ERR_INTEGRITY => c"integrity",
        STNET_ERR_IMPORT => c"import",
        STNET_ERR_LABEL => c"label",
        STNET_ERR_EMPTY_CLIP => c"empty-clip",
        STNET_ERR_STRATIFICATION => c"stratification",
        STNET_ERR_DATA => c"data",
        STNET_ERR_DIVERGENCE => c"divergence",
        STNET_ERR_INSUFFICIENT_FRAMES => c"insufficient-frames",
        STNET_ERR_IO => c"io",
        _ => c"unknown",
    };
    name.as_ptr()
}

/// Build a freshly initialized model. `variant` is a tag such as
/// `"c3d"` or `"lrcn_vgg"`; `preset` is `STNET_PRESET_DESK` or
/// `STNET_PRESET_FULL`.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_build(
    variant: *const c_char,
    preset: i32,
    seed: u64,
    out: *mut *mut StnetModel,
) -> i32 {
    guard(|| {
        let variant: Variant = str_arg(variant, "variant")?.parse().map_err(|e: Error| usage(&e.to_string()))?;
        let cfg = match preset {
            STNET_PRESET_DESK => ModelConfig::desk(variant),
            STNET_PRESET_FULL => ModelConfig::full(variant),
            p => return Err(usage(&format!("unknown preset {p}"))),
        };
        publish(out, Model::build(&cfg, seed)?)
    })
}

/// Load a checkpoint written by `stnet_model_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_load(path: *const c_char, out: *mut *mut StnetModel) -> i32 {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        publish(out, load_checkpoint(path)?.0)
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_save(model: *const StnetModel, path: *const c_char) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        save_checkpoint(&m.inner, PathBuf::from(str_arg(path, "path")?), &CheckpointMeta::default())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_free(model: *mut StnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Clip geometry `{frames, height, width, channels}`.
///
/// # Safety
/// `out_dims` must point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_input_dims(model: *const StnetModel, out_dims: *mut usize) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        if out_dims.is_null() {
            return Err(usage("out_dims is NULL"));
        }
        let d = m.inner.config().input.dims();
        ptr::copy_nonoverlapping(d.as_ptr(), out_dims, 4);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_param_count(model: *const StnetModel, out: *mut usize) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        *out = m.inner.param_count();
        Ok(())
    })
}

/// Eval-mode class probabilities `{nonviolent, violent}` for one clip of
/// `len` floats in `[T, H, W, C]` order, values in `[0, 1]`.
///
/// # Safety
/// `clip` must point to `len` floats and `out_probs` to 2 writable floats.
#[no_mangle]
pub unsafe extern "C" fn stnet_model_predict(
    model: *const StnetModel,
    clip: *const f32,
    len: usize,
    out_probs: *mut f32,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        if clip.is_null() || out_probs.is_null() {
            return Err(usage("clip or out_probs is NULL"));
        }
        let dims = m.inner.config().input.dims();
        let need: usize = dims.iter().product();
        if len != need {
            return Err(Error::Shape(format!("clip has {len} values, model needs {need}")));
        }
        let data = std::slice::from_raw_parts(clip, len).to_vec();
        let p = m.inner.predict_clip(&Tensor::new(dims.to_vec(), data)?)?;
        ptr::copy_nonoverlapping(p.data().as_ptr(), out_probs, 2);
        Ok(())
    })
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn stnet_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}
