//! C ABI over the codec: load or build a model, compress interleaved RGB8
//! images to bitstreams and back, and compute quality metrics.
//!
//! Every function returns an [`IlicStatus`]. On failure a message is kept
//! per thread and can be read with [`ilic_last_error`]. Buffers handed out
//! by the library are released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ilic_core::entropy::{compress, decompress, EncodeOptions};
use ilic_core::harness::{metrics, TrainConfig};
use ilic_core::image_io::{from_rgb8, to_rgb8};
use ilic_core::interleave::PlanarImage;
use ilic_core::model::Model;
use ilic_core::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IlicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Corrupt = 5,
    Shape = 6,
    Config = 7,
    Internal = 8,
}

/// Opaque model handle.
pub struct IlicModel {
    model: Model,
}

/// Bytes owned by the library.
#[repr(C)]
pub struct IlicBuffer {
    pub data: *mut u8,
    pub len: usize,
}

/// Interleaved RGB8 image owned by the library; `height * width * 3` bytes.
#[repr(C)]
pub struct IlicImage {
    pub data: *mut u8,
    pub height: usize,
    pub width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> IlicStatus {
    match e {
        Error::Shape(_) => IlicStatus::Shape,
        Error::InvalidArgument(_) | Error::Image(_) => IlicStatus::InvalidArgument,
        Error::Format(_) | Error::MissingParam(_) => IlicStatus::Format,
        Error::Corrupt(_) => IlicStatus::Corrupt,
        Error::Config(_) => IlicStatus::Config,
        Error::Io(_) => IlicStatus::Io,
        Error::Graph(_) => IlicStatus::Internal,
    }
}

type Call = std::result::Result<(), (IlicStatus, String)>;

fn fail(status: IlicStatus, msg: &str) -> Call {
    Err((status, msg.to_string()))
}

fn lift<T>(r: ilic_core::Result<T>) -> std::result::Result<T, (IlicStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

/// Runs `f`, records its error and turns panics into `Internal`.
fn guard(f: impl FnOnce() -> Call) -> IlicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            IlicStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IlicStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> std::result::Result<&'a Path, (IlicStatus, String)> {
    if p.is_null() {
        return Err((IlicStatus::NullPointer, "path is null".into()));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (IlicStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

unsafe fn image_arg(rgb: *const u8, height: usize, width: usize) -> std::result::Result<PlanarImage, (IlicStatus, String)> {
    if rgb.is_null() {
        return Err((IlicStatus::NullPointer, "image data is null".into()));
    }
    let len = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .ok_or((IlicStatus::InvalidArgument, "image extents overflow".to_string()))?;
    let bytes = unsafe { std::slice::from_raw_parts(rgb, len) };
    lift(from_rgb8(height, width, bytes))
}

fn leak(v: Vec<u8>) -> (*mut u8, usize) {
    let b = v.into_boxed_slice();
    let len = b.len();
    (Box::into_raw(b) as *mut u8, len)
}

unsafe fn reclaim(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)) });
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ilic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ilic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilic_model_load(path: *const c_char, out: *mut *mut IlicModel) -> IlicStatus {
    guard(|| {
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let path = unsafe { path_arg(path) }?;
        let model = lift(Model::load(path))?;
        unsafe { *out = Box::into_raw(Box::new(IlicModel { model })) };
        Ok(())
    })
}

/// Builds a freshly initialised model from `key = value` configuration text
/// (null for defaults).
///
/// # Safety
/// `config` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilic_model_init(config: *const c_char, seed: u64, out: *mut *mut IlicModel) -> IlicStatus {
    guard(|| {
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let mut cfg = TrainConfig::default();
        if !config.is_null() {
            let text = unsafe { CStr::from_ptr(config) }
                .to_str()
                .map_err(|_| (IlicStatus::InvalidArgument, "configuration is not UTF-8".to_string()))?;
            lift(cfg.apply_text(text))?;
        }
        let model = lift(Model::init(cfg.model, seed))?;
        unsafe { *out = Box::into_raw(Box::new(IlicModel { model })) };
        Ok(())
    })
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ilic_model_save(model: *const IlicModel, path: *const c_char) -> IlicStatus {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else { return fail(IlicStatus::NullPointer, "model is null") };
        let path = unsafe { path_arg(path) }?;
        lift(m.model.save(path))
    })
}

/// Eight-byte model identifier stored in every bitstream.
///
/// # Safety
/// `model` must come from this library; `out` must hold 8 bytes.
#[no_mangle]
pub unsafe extern "C" fn ilic_model_id(model: *const IlicModel, out: *mut u8) -> IlicStatus {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else { return fail(IlicStatus::NullPointer, "model is null") };
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let id = m.model.model_id();
        unsafe { ptr::copy_nonoverlapping(id.as_ptr(), out, id.len()) };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ilic_model_free(model: *mut IlicModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Compresses an interleaved RGB8 image into a container bitstream.
///
/// # Safety
/// `rgb` must hold `height * width * 3` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilic_encode(
    model: *const IlicModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    noise_seed: u64,
    out: *mut IlicBuffer,
) -> IlicStatus {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else { return fail(IlicStatus::NullPointer, "model is null") };
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let img = unsafe { image_arg(rgb, height, width) }?;
        let bytes = lift(compress(&m.model, &img, EncodeOptions { noise_seed }))?;
        let (data, len) = leak(bytes);
        unsafe { *out = IlicBuffer { data, len } };
        Ok(())
    })
}

/// Decompresses a container bitstream into an interleaved RGB8 image.
///
/// # Safety
/// `data` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilic_decode(model: *const IlicModel, data: *const u8, len: usize, out: *mut IlicImage) -> IlicStatus {
    guard(|| {
        let Some(m) = (unsafe { model.as_ref() }) else { return fail(IlicStatus::NullPointer, "model is null") };
        if data.is_null() || out.is_null() {
            return fail(IlicStatus::NullPointer, "data or out is null");
        }
        let bytes = unsafe { std::slice::from_raw_parts(data, len) };
        let img = lift(decompress(bytes, &m.model))?;
        let (height, width) = (img.height(), img.width());
        let (data, _) = leak(to_rgb8(&img));
        unsafe { *out = IlicImage { data, height, width } };
        Ok(())
    })
}

/// # Safety
/// `buf` must be null or filled by this library; it is reset to empty.
#[no_mangle]
pub unsafe extern "C" fn ilic_buffer_free(buf: *mut IlicBuffer) {
    if let Some(b) = unsafe { buf.as_mut() } {
        unsafe { reclaim(b.data, b.len) };
        *b = IlicBuffer { data: ptr::null_mut(), len: 0 };
    }
}

/// # Safety
/// `img` must be null or filled by this library; it is reset to empty.
#[no_mangle]
pub unsafe extern "C" fn ilic_image_free(img: *mut IlicImage) {
    if let Some(i) = unsafe { img.as_mut() } {
        unsafe { reclaim(i.data, i.height * i.width * 3) };
        *i = IlicImage { data: ptr::null_mut(), height: 0, width: 0 };
    }
}

/// PSNR in dB between two RGB8 images of the same extents, capped at 100.
///
/// # Safety
/// Both images must hold `height * width * 3` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilic_psnr(a: *const u8, b: *const u8, height: usize, width: usize, out: *mut f64) -> IlicStatus {
    guard(|| {
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let (x, y) = unsafe { (image_arg(a, height, width)?, image_arg(b, height, width)?) };
        let v = lift(metrics::psnr(&x, &y))?;
        unsafe { *out = v };
        Ok(())
    })
}

/// MS-SSIM between two RGB8 images; `scales` (may be null) receives the
/// number of scales used.
///
/// # Safety
/// Both images must hold `height * width * 3` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilic_ms_ssim(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
    scales: *mut usize,
) -> IlicStatus {
    guard(|| {
        if out.is_null() {
            return fail(IlicStatus::NullPointer, "out is null");
        }
        let (x, y) = unsafe { (image_arg(a, height, width)?, image_arg(b, height, width)?) };
        let v = lift(metrics::ms_ssim(&x, &y))?;
        unsafe {
            *out = v.value;
            if !scales.is_null() {
                *scales = v.scales;
            }
        }
        Ok(())
    })
}
