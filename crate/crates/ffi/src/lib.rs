//! C ABI over the graphau-pain library.
//!
//! Every function returns a [`GraphauStatus`]. On failure a description is
//! kept per thread and can be read with [`graphau_last_error_message`].
//! Models are opaque handles created by `graphau_model_new_desk` or
//! `graphau_model_load` and released with `graphau_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use graphau_pain::data::class_weights_from_rates;
use graphau_pain::facs::{compute_pspi, AuIntensityMap, Scheme};
use graphau_pain::model::{forward, Mode, ModelConfig, ModelParams};
use graphau_pain::{Checkpoint, Error, ErrorKind};
use ndarray::ArrayView3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphauStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Config = 4,
    Data = 5,
    Numeric = 6,
    Io = 7,
    IncompatibleCheckpoint = 8,
    Panic = 9,
}

/// Loaded network parameters plus their configuration.
pub struct GraphauModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> GraphauStatus {
    match err {
        Error::Io(_) => GraphauStatus::Io,
        Error::IncompatibleCheckpoint(_) => GraphauStatus::IncompatibleCheckpoint,
        _ => match err.kind() {
            ErrorKind::Config => GraphauStatus::Config,
            ErrorKind::Data => GraphauStatus::Data,
            ErrorKind::Numeric => GraphauStatus::Numeric,
        },
    }
}

struct Fail(GraphauStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: GraphauStatus, msg: &str) -> Result<T, Fail> {
    Err(Fail(status, msg.to_string()))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GraphauStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GraphauStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside graphau-pain");
            GraphauStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(GraphauStatus::NullPointer, &format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(GraphauStatus::NullPointer, &format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut()
        .ok_or_else(|| Fail(GraphauStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Fail> {
    if ptr.is_null() {
        return fail(GraphauStatus::NullPointer, "path is null");
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(GraphauStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(ptr: *const GraphauModel) -> Result<&'a GraphauModel, Fail> {
    ptr.as_ref()
        .ok_or_else(|| Fail(GraphauStatus::NullPointer, "model is null".into()))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn graphau_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// PSPI from parallel arrays of AU codes and intensities. AUs 4, 6, 7, 9,
/// 10 and 43 must all be present.
///
/// # Safety
/// `codes` and `intensities` must each point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn graphau_compute_pspi(
    codes: *const u8,
    intensities: *const i32,
    n: usize,
    out_pspi: *mut u8,
) -> GraphauStatus {
    guard(|| {
        let codes = slice(codes, n, "codes")?;
        let values = slice(intensities, n, "intensities")?;
        let out = out_ref(out_pspi, "out_pspi")?;
        let mut map = AuIntensityMap::new();
        for (&c, &v) in codes.iter().zip(values) {
            map.set(c, v as i64)?;
        }
        *out = compute_pspi(&map)?.value();
        Ok(())
    })
}

/// Pain category index of a PSPI score under the 3- or 4-category scheme.
///
/// # Safety
/// `out_category` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn graphau_categorize(
    pspi: i32,
    classes: u32,
    out_category: *mut u32,
) -> GraphauStatus {
    guard(|| {
        let out = out_ref(out_category, "out_category")?;
        let scheme = Scheme::from_classes(classes as usize)?;
        *out = match scheme {
            Scheme::Three => graphau_pain::facs::categorize_raw_3(pspi as i64)?.index(),
            Scheme::Four => graphau_pain::facs::categorize_raw_4(pspi as i64)?.index(),
        } as u32;
        Ok(())
    })
}

/// Inverse-frequency class weights from per-class rates; the weights sum to `n`.
///
/// # Safety
/// `rates` and `out_weights` must each point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn graphau_class_weights(
    rates: *const f64,
    n: usize,
    out_weights: *mut f64,
) -> GraphauStatus {
    guard(|| {
        let rates = slice(rates, n, "rates")?;
        let out = slice_mut(out_weights, n, "out_weights")?;
        let w = class_weights_from_rates(rates)?;
        out.copy_from_slice(w.as_slice());
        Ok(())
    })
}

fn boxed(ckpt: Checkpoint, out: &mut *mut GraphauModel) {
    *out = Box::into_raw(Box::new(GraphauModel { ckpt }));
}

/// Freshly initialized CPU-sized model with 3 or 4 pain classes.
///
/// # Safety
/// `out_model` must be a valid pointer; the handle it receives must be
/// released with [`graphau_model_free`].
#[no_mangle]
pub unsafe extern "C" fn graphau_model_new_desk(
    seed: u64,
    classes: u32,
    out_model: *mut *mut GraphauModel,
) -> GraphauStatus {
    guard(|| {
        let out = out_ref(out_model, "out_model")?;
        let scheme = Scheme::from_classes(classes as usize)?;
        let cfg = ModelConfig {
            d_pain: scheme.classes(),
            ..ModelConfig::desk()
        };
        cfg.validate()?;
        let params = ModelParams::init(&cfg, seed);
        boxed(Checkpoint::fresh(cfg, params), out);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn graphau_model_load(
    path: *const c_char,
    out_model: *mut *mut GraphauModel,
) -> GraphauStatus {
    guard(|| {
        let out = out_ref(out_model, "out_model")?;
        let path = path_arg(path)?;
        boxed(Checkpoint::load(&path)?, out);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn graphau_model_save(
    model: *const GraphauModel,
    path: *const c_char,
) -> GraphauStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.ckpt.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Network geometry: input side in pixels, pain classes and AU nodes.
///
/// # Safety
/// `model` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn graphau_model_shape(
    model: *const GraphauModel,
    out_input_side: *mut usize,
    out_classes: *mut usize,
    out_aus: *mut usize,
) -> GraphauStatus {
    guard(|| {
        let cfg = &model_ref(model)?.ckpt.model;
        if let Some(o) = out_input_side.as_mut() {
            *o = cfg.backbone.input_side;
        }
        if let Some(o) = out_classes.as_mut() {
            *o = cfg.d_pain;
        }
        if let Some(o) = out_aus.as_mut() {
            *o = cfg.n_au;
        }
        Ok(())
    })
}

/// Inference on one image: `side * side * 3` floats in [0, 1], row-major
/// with interleaved RGB. Writes the pain logits and the AU occurrence
/// probabilities.
///
/// # Safety
/// Each pointer must reference the stated number of floats.
#[no_mangle]
pub unsafe extern "C" fn graphau_model_forward(
    model: *const GraphauModel,
    image: *const f32,
    image_len: usize,
    out_logits: *mut f32,
    logits_len: usize,
    out_au_probs: *mut f32,
    au_probs_len: usize,
) -> GraphauStatus {
    guard(|| {
        let m = model_ref(model)?;
        let cfg = &m.ckpt.model;
        let side = cfg.backbone.input_side;
        if image_len != side * side * 3 {
            return fail(
                GraphauStatus::InvalidArgument,
                &format!("image has {image_len} values, expected {side}x{side}x3"),
            );
        }
        if logits_len < cfg.d_pain || au_probs_len < cfg.n_au {
            return fail(
                GraphauStatus::BufferTooSmall,
                &format!(
                    "need {} logits and {} AU probabilities",
                    cfg.d_pain, cfg.n_au
                ),
            );
        }
        let pixels = slice(image, image_len, "image")?;
        let logits = slice_mut(out_logits, logits_len, "out_logits")?;
        let probs = slice_mut(out_au_probs, au_probs_len, "out_au_probs")?;
        let view = ArrayView3::from_shape((side, side, 3), pixels)
            .map_err(|e| Fail(GraphauStatus::InvalidArgument, e.to_string()))?;
        let out = forward(view, &m.ckpt.params, cfg, Mode::Eval)?;
        for (dst, src) in logits.iter_mut().zip(out.logits.iter()) {
            *dst = *src;
        }
        for (dst, src) in probs.iter_mut().zip(out.probs.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn graphau_model_free(model: *mut GraphauModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
