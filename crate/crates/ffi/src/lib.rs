//! C ABI for tinydistill: load an encoder checkpoint, embed images, and
//! apply spatial or frequency masking.
//!
//! Every fallible function returns a [`TdStatus`]; on failure the message
//! is available from [`td_last_error_message`] on the same thread. Buffers
//! are row-major `double` arrays owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use tinydistill::data::ImageTensor;
use tinydistill::encoder::Encoder;
use tinydistill::masking::{frequency_mask, spatial_mask, FrequencyMaskSpec, MaskedView, SpatialMaskSpec};
use tinydistill::ndarray::Array2;
use tinydistill::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Corrupt = 5,
    ConfigMismatch = 6,
    Shape = 7,
    Panic = 8,
    Other = 9,
}

/// Opaque encoder handle created by [`td_encoder_load`].
pub struct TdEncoder {
    inner: Encoder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TdStatus, msg: impl Into<String>) -> TdStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> TdStatus {
    match e {
        Error::Io { .. } => TdStatus::Io,
        Error::Corrupt { .. } | Error::CheckpointVersion { .. } => TdStatus::Corrupt,
        Error::ConfigMismatch(_) => TdStatus::ConfigMismatch,
        Error::Shape(_) => TdStatus::Shape,
        Error::Config(_) | Error::Empty(_) => TdStatus::InvalidArgument,
        _ => TdStatus::Other,
    }
}

/// Runs `f`, recording errors and converting panics into [`TdStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), (TdStatus, String)>) -> TdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TdStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(TdStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (TdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TdStatus, String) {
    (TdStatus::NullPointer, format!("{what} is NULL"))
}

/// Copies a caller image into an [`ImageTensor`].
///
/// # Safety
/// `pixels` must point to `height * width` readable doubles.
unsafe fn read_image(pixels: *const f64, height: usize, width: usize) -> Result<ImageTensor, (TdStatus, String)> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    if height == 0 || width == 0 {
        return Err((TdStatus::InvalidArgument, "image dimensions must be positive".into()));
    }
    let n = height
        .checked_mul(width)
        .ok_or((TdStatus::InvalidArgument, "image dimensions overflow".to_string()))?;
    let data = std::slice::from_raw_parts(pixels, n).to_vec();
    let arr = Array2::from_shape_vec((height, width), data).map_err(|e| (TdStatus::Shape, e.to_string()))?;
    ImageTensor::new(arr).map_err(lib_err)
}

/// # Safety
/// `out` must be NULL or point to `len` writable doubles.
unsafe fn write_out<'a>(out: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], (TdStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err((TdStatus::BufferTooSmall, format!("{what} holds {len} values but {need} are needed")));
    }
    Ok(std::slice::from_raw_parts_mut(out, need))
}

/// # Safety
/// See [`write_out`]; `mask_out` may be NULL to skip the mask map.
unsafe fn write_view(
    view: &MaskedView,
    out_pixels: *mut f64,
    out_len: usize,
    mask_out: *mut u8,
    mask_len: usize,
    masked_count: *mut usize,
) -> Result<(), (TdStatus, String)> {
    let px = view.image.pixels();
    let dst = write_out(out_pixels, out_len, px.len(), "out_pixels")?;
    if !mask_out.is_null() {
        let need = view.mask_map.len();
        if mask_len < need {
            return Err((
                TdStatus::BufferTooSmall,
                format!("mask_out holds {mask_len} values but {need} are needed"),
            ));
        }
        let m = std::slice::from_raw_parts_mut(mask_out, need);
        for (d, s) in m.iter_mut().zip(view.mask_map.iter()) {
            *d = u8::from(*s);
        }
    }
    for (d, s) in dst.iter_mut().zip(px.iter()) {
        *d = *s;
    }
    if !masked_count.is_null() {
        *masked_count = view.masked_count();
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next tinydistill call on the same thread.
#[no_mangle]
pub extern "C" fn td_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an encoder checkpoint and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
/// The handle must be released with [`td_encoder_free`].
#[no_mangle]
pub unsafe extern "C" fn td_encoder_load(path: *const c_char, out: *mut *mut TdEncoder) -> TdStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (TdStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let inner = Encoder::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(TdEncoder { inner }));
        Ok(())
    })
}

/// Releases a handle from [`td_encoder_load`]. NULL is ignored.
///
/// # Safety
/// `encoder` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_encoder_free(encoder: *mut TdEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Embedding width (the encoder's hidden dimension), or 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn td_encoder_dim(encoder: *const TdEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.inner.config().dim)
}

/// Input size the encoder expects.
///
/// # Safety
/// `encoder` must be a live handle; `height` and `width` writable pointers.
#[no_mangle]
pub unsafe extern "C" fn td_encoder_image_size(
    encoder: *const TdEncoder,
    height: *mut usize,
    width: *mut usize,
) -> TdStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        if height.is_null() || width.is_null() {
            return Err(null("height/width"));
        }
        let (h, w) = e.inner.config().image_size;
        *height = h;
        *width = w;
        Ok(())
    })
}

/// Mean-pooled embedding of one grayscale image with values in [0, 1].
///
/// # Safety
/// `pixels` must point to `height * width` doubles and `out` to `out_len`
/// writable doubles (at least [`td_encoder_dim`]).
#[no_mangle]
pub unsafe extern "C" fn td_encoder_embed(
    encoder: *const TdEncoder,
    pixels: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> TdStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        let img = read_image(pixels, height, width)?;
        let z = e.inner.embed(&img).map_err(lib_err)?;
        let dst = write_out(out, out_len, z.len(), "out")?;
        for (d, s) in dst.iter_mut().zip(z.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Replaces a seeded choice of `round(ratio * P)` of the `P` patches with
/// the image mean. Writes the masked image to `out_pixels`, optionally the
/// per-patch mask (row-major, 1 = masked) to `mask_out`, and the masked
/// patch count to `masked_count`.
///
/// # Safety
/// `pixels` and `out_pixels` must hold `height * width` doubles; `mask_out`
/// and `masked_count` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn td_spatial_mask(
    pixels: *const f64,
    height: usize,
    width: usize,
    patch_size: usize,
    ratio: f64,
    seed: u64,
    out_pixels: *mut f64,
    out_len: usize,
    mask_out: *mut u8,
    mask_len: usize,
    masked_count: *mut usize,
) -> TdStatus {
    guard(|| {
        let img = read_image(pixels, height, width)?;
        let spec = SpatialMaskSpec {
            patch_size,
            mask_ratio: ratio,
            seed,
        };
        let view = spatial_mask(&img, &spec).map_err(lib_err)?;
        write_view(&view, out_pixels, out_len, mask_out, mask_len, masked_count)
    })
}

/// Band-stop masks `round(ratio * E)` magnitude bins, where `E` counts the
/// bins outside the preserved low-frequency centre, favouring
/// `bands_per_mask` of `num_bands` radial bands; phase is kept. Outputs as
/// for [`td_spatial_mask`], with the mask over centred frequency bins.
///
/// # Safety
/// As for [`td_spatial_mask`].
#[no_mangle]
pub unsafe extern "C" fn td_frequency_mask(
    pixels: *const f64,
    height: usize,
    width: usize,
    num_bands: usize,
    bands_per_mask: usize,
    ratio: f64,
    seed: u64,
    out_pixels: *mut f64,
    out_len: usize,
    mask_out: *mut u8,
    mask_len: usize,
    masked_count: *mut usize,
) -> TdStatus {
    guard(|| {
        let img = read_image(pixels, height, width)?;
        let spec = FrequencyMaskSpec {
            num_bands,
            bands_per_mask,
            mask_ratio: ratio,
            ..FrequencyMaskSpec::for_size(height, width, seed)
        };
        let view = frequency_mask(&img, &spec).map_err(lib_err)?;
        write_view(&view, out_pixels, out_len, mask_out, mask_len, masked_count)
    })
}
