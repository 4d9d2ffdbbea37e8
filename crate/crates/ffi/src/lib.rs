//! C ABI over `unfoldsr`.
//!
//! Every fallible function returns a status code: `USR_OK` on success, a
//! positive library error code, or one of the negative binding-level codes.
//! The message of the most recent failure on the calling thread is available
//! through [`usr_last_error`]. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use unfoldsr::dataset::check_scale;
use unfoldsr::imageops::{bicubic_resize, psnr, rgb_to_luma, ImagePlane, RgbImage};
use unfoldsr::models::{load_checkpoint, read_checkpoint, Network, Precision};
use unfoldsr::proximal::{lesita_prox, soft_threshold};
use unfoldsr::solvers::{ista_solve, l1l1_solve, Dictionary, SideInfoProblem, SparseProblem};
use unfoldsr::Error;

pub const USR_OK: i32 = 0;
pub const USR_ERR_NULL_POINTER: i32 = -1;
pub const USR_ERR_INVALID_UTF8: i32 = -2;
pub const USR_ERR_PANIC: i32 = -3;
pub const USR_ERR_BAD_ARGUMENT: i32 = -4;

// library error codes, mirroring `unfoldsr::Error::code`
pub const USR_ERR_INVALID_PARAMETER: i32 = 1;
pub const USR_ERR_SHAPE: i32 = 2;
pub const USR_ERR_DEGENERATE_INPUT: i32 = 3;
pub const USR_ERR_NUMERIC_FAILURE: i32 = 4;
pub const USR_ERR_UNINITIALIZED_GRADIENTS: i32 = 5;
pub const USR_ERR_UNSUPPORTED: i32 = 6;
pub const USR_ERR_BAD_MAGIC: i32 = 7;
pub const USR_ERR_TRUNCATED: i32 = 8;
pub const USR_ERR_MALFORMED_HEADER: i32 = 9;
pub const USR_ERR_UNSUPPORTED_VERSION: i32 = 10;
pub const USR_ERR_UNSUPPORTED_MAXVAL: i32 = 11;
pub const USR_ERR_CONFIG_MISMATCH: i32 = 12;
pub const USR_ERR_MISSING_DATA: i32 = 13;
pub const USR_ERR_EMPTY_DATASET: i32 = 14;
pub const USR_ERR_NAN_LOSS: i32 = 15;
pub const USR_ERR_CONFIG: i32 = 16;
pub const USR_ERR_IO: i32 = 17;

pub const USR_MODE_L1: i32 = 0;
pub const USR_MODE_L1L1: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Lib(Error),
    Binding(i32, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Binding(USR_ERR_NULL_POINTER, "null pointer argument".into())
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure::Binding(USR_ERR_BAD_ARGUMENT, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => USR_OK,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            e.code()
        }
        Ok(Err(Failure::Binding(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            USR_ERR_PANIC
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(p: *mut T, v: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null());
    }
    p.write(v);
    Ok(())
}

fn area(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b).ok_or_else(|| bad("image size overflows"))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn usr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Soft thresholding `sign(u) max(|u| - gamma, 0)`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn usr_soft_threshold(u: f64, gamma: f64, out: *mut f64) -> i32 {
    guard(|| write(out, soft_threshold(u, gamma)?))
}

/// The side-information proximal operator.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn usr_lesita_prox(u: f64, side: f64, mu: f64, out: *mut f64) -> i32 {
    guard(|| write(out, lesita_prox(u, side, mu)?))
}

/// Proximal gradient solve from a zero start. `dict` is row-major
/// `n_y x n_alpha`; `side` (length `n_alpha`) is read only in
/// `USR_MODE_L1L1`. Writes `n_alpha` values to `solution` and the iteration
/// count to `iterations` (which may be null).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn usr_solve(
    mode: i32,
    dict: *const f64,
    n_y: usize,
    n_alpha: usize,
    y: *const f64,
    side: *const f64,
    lambda: f64,
    max_iters: usize,
    tol: f64,
    solution: *mut f64,
    iterations: *mut usize,
) -> i32 {
    guard(|| {
        if solution.is_null() {
            return Err(null());
        }
        let d = Dictionary::from_rows(n_y, n_alpha, slice(dict, area(n_y, n_alpha)?)?.to_vec())?;
        let y = slice(y, n_y)?.to_vec();
        let report = match mode {
            USR_MODE_L1 => ista_solve(&SparseProblem::new(d, y, lambda)?, max_iters, tol)?,
            USR_MODE_L1L1 => {
                let side = slice(side, n_alpha)?.to_vec();
                l1l1_solve(&SideInfoProblem::new(d, y, lambda, side)?, max_iters, tol)?
            }
            other => return Err(bad(format!("unknown solver mode {other}"))),
        };
        std::slice::from_raw_parts_mut(solution, n_alpha).copy_from_slice(&report.solution);
        if !iterations.is_null() {
            iterations.write(report.iterations);
        }
        Ok(())
    })
}

/// PSNR in dB of two `len`-pixel images; infinite for identical inputs.
///
/// # Safety
/// `a` and `b` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn usr_psnr(a: *const f64, b: *const f64, len: usize, peak: f64, out: *mut f64) -> i32 {
    guard(|| {
        let pa = ImagePlane::new(len, 1, slice(a, len)?.to_vec())?;
        let pb = ImagePlane::new(len, 1, slice(b, len)?.to_vec())?;
        write(out, psnr(&pa, &pb, peak)?)
    })
}

enum Net {
    Single(Network<f32>),
    Double(Network<f64>),
}

/// A loaded super-resolution network.
pub struct UsrModel {
    net: Net,
    scale: usize,
}

impl UsrModel {
    fn from_checkpoint(ckpt: unfoldsr::models::Checkpoint) -> Result<Box<Self>, Failure> {
        let scale = ckpt.config.scale;
        let net = match ckpt.config.precision {
            Precision::Single => Net::Single(ckpt.to_network()?),
            Precision::Double => Net::Double(ckpt.to_network()?),
        };
        Ok(Box::new(Self { net, scale }))
    }
}

/// Loads a checkpoint file. On success `*out` owns a model that must be
/// released with [`usr_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn usr_model_load(path: *const c_char, out: *mut *mut UsrModel) -> i32 {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null());
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Binding(USR_ERR_INVALID_UTF8, "path is not valid UTF-8".into()))?;
        let model = UsrModel::from_checkpoint(load_checkpoint(Path::new(p))?)?;
        out.write(Box::into_raw(model));
        Ok(())
    })
}

/// Loads a checkpoint from `len` bytes in memory.
///
/// # Safety
/// `bytes` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn usr_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut UsrModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let model = UsrModel::from_checkpoint(read_checkpoint(slice(bytes, len)?)?)?;
        out.write(Box::into_raw(model));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn usr_model_free(model: *mut UsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor the model was trained for, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn usr_model_scale(model: *const UsrModel) -> u32 {
    model.as_ref().map_or(0, |m| m.scale as u32)
}

/// Super-resolves a `width x height` low-resolution image with an
/// interleaved RGB guide of `scale` times its size. Writes
/// `width * scale * height * scale` row-major pixels to `out`, unclamped.
///
/// # Safety
/// `lr` must hold `width * height` values, `guide_rgb` three values per
/// output pixel and `out` one value per output pixel.
#[no_mangle]
pub unsafe extern "C" fn usr_model_superresolve(
    model: *const UsrModel,
    lr: *const f64,
    width: usize,
    height: usize,
    guide_rgb: *const f64,
    scale: u32,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(null)?;
        let scale = scale as usize;
        check_scale(scale)?;
        if scale != m.scale {
            return Err(Error::ConfigMismatch(format!("model is for scale {}, requested {scale}", m.scale)).into());
        }
        let lr = ImagePlane::new(width, height, slice(lr, area(width, height)?)?.to_vec())?;
        let (w, h) = (area(width, scale)?, area(height, scale)?);
        let n = area(w, h)?;
        let guide = RgbImage::new(w, h, slice(guide_rgb, area(n, 3)?)?.to_vec())?;
        let y_up = bicubic_resize(&lr, w, h)?;
        let z = rgb_to_luma(&guide);
        let sr = match &m.net {
            Net::Single(net) => net.forward(&y_up, &z)?,
            Net::Double(net) => net.forward(&y_up, &z)?,
        };
        if out.is_null() {
            return Err(null());
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(sr.pixels());
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn usr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
