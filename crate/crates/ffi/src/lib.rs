//! C interface to the segstress corruption, metrics and tiling routines.
//!
//! Masks and images cross the boundary as opaque handles. Every fallible
//! call returns an [`SgStatus`]; on failure [`sg_last_error`] holds a
//! message for the calling thread. Handles returned through `out`
//! parameters belong to the caller and must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use segstress::corruption::{
    corrupt, erase_cells, relabel_components, resegment_cells_with, Connectivity, ResegmentPolicy,
};
use segstress::ingest::percentile_normalize;
use segstress::metrics::evaluate;
use segstress::patchgrid::plan_grid;
use segstress::tensor::{save_tensor_file, Tensor};
use segstress::types::{CorruptionSpec, InstanceMask, MultiChannelImage, Raster};
use segstress::Error;

/// Opaque instance mask. Label 0 is background.
pub struct SgMask(InstanceMask);

/// Opaque multi-channel image, channels interleaved per pixel.
pub struct SgImage(MultiChannelImage);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgPolicy {
    Random = 0,
    ForceErode = 1,
    ForceDilate = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SgMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub dsc: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SgPatchGrid {
    pub orig_w: usize,
    pub orig_h: usize,
    pub patch: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub rows: usize,
    pub cols: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SgStatus::Io,
            Error::BadMagic { .. }
            | Error::DimensionOverflow { .. }
            | Error::TruncatedPayload { .. }
            | Error::UnknownDtype(_)
            | Error::TensorLayout(_)
            | Error::UnsupportedTiff { .. }
            | Error::Tiff(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Protocol { .. } => SgStatus::Format,
            Error::DimensionMismatch { .. }
            | Error::PatchCount { .. }
            | Error::PatchSize { .. }
            | Error::ChannelMismatch { .. } => SgStatus::DimensionMismatch,
            _ => SgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SgStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(SgStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SgStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_fraction(f: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(invalid(format!("fraction {f} outside [0, 1]")))
    }
}

/// Message describing the last failure on this thread, or NULL. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a mask from `width * height` row-major labels. `labels` may be
/// NULL for an all-background mask.
///
/// # Safety
/// `labels` must be NULL or point to `width * height` readable `u32`s.
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_new(
    width: usize,
    height: usize,
    labels: *const u32,
    out: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| invalid("dimensions overflow"))?;
        let mask = if labels.is_null() {
            InstanceMask::empty(width, height)
        } else {
            InstanceMask::new(width, height, std::slice::from_raw_parts(labels, n).to_vec())?
        };
        emit(out, SgMask(mask))
    })
}

/// # Safety
/// `mask` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_free(mask: *mut SgMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// # Safety
/// `mask` must be NULL or a live handle. Returns 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_width(mask: *const SgMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.width())
}

/// # Safety
/// `mask` must be NULL or a live handle. Returns 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_height(mask: *const SgMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.height())
}

/// Number of distinct non-zero labels.
///
/// # Safety
/// `mask` must be NULL or a live handle. Returns 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_cell_count(mask: *const SgMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.cell_count())
}

/// Copy the labels into `out`, which must hold exactly `width * height`
/// values.
///
/// # Safety
/// `mask` must be a live handle and `out` must point to `len` writable `u32`s.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_copy_labels(mask: *const SgMask, out: *mut u32, len: usize) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let labels = m.0.labels();
        if len != labels.len() {
            return Err(Failure(
                SgStatus::DimensionMismatch,
                format!("buffer holds {len} labels, mask has {}", labels.len()),
            ));
        }
        ptr::copy_nonoverlapping(labels.as_ptr(), out, len);
        Ok(())
    })
}

/// Read a mask from a tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_load(path: *const c_char, out: *mut *mut SgMask) -> SgStatus {
    guard(|| {
        let mask = Tensor::read(path_arg(path)?)?.into_instance_mask()?;
        emit(out, SgMask(mask))
    })
}

/// Write a mask as a u32 tensor file.
///
/// # Safety
/// `mask` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_save(mask: *const SgMask, path: *const c_char) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        save_tensor_file(path_arg(path)?, &m.0)?;
        Ok(())
    })
}

/// Remove `round(fraction * N)` cells chosen by `seed`.
///
/// # Safety
/// `mask` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_erase_cells(
    mask: *const SgMask,
    fraction: f64,
    seed: u64,
    out: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        check_fraction(fraction)?;
        emit(out, SgMask(erase_cells(&m.0, fraction, seed)))
    })
}

/// Erode or dilate every cell with a square kernel no larger than `k_max`.
///
/// # Safety
/// `mask` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_resegment_cells(
    mask: *const SgMask,
    k_max: u32,
    seed: u64,
    policy: SgPolicy,
    out: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        let policy = match policy {
            SgPolicy::Random => ResegmentPolicy::Random,
            SgPolicy::ForceErode => ResegmentPolicy::ForceErode,
            SgPolicy::ForceDilate => ResegmentPolicy::ForceDilate,
        };
        emit(out, SgMask(resegment_cells_with(&m.0, k_max, seed, policy)?))
    })
}

/// Erase then resegment with one seed.
///
/// # Safety
/// `mask` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_corrupt(
    mask: *const SgMask,
    missing_fraction: f64,
    k_max: u32,
    seed: u64,
    out: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        let spec = CorruptionSpec::new(missing_fraction, k_max, seed)?;
        emit(out, SgMask(corrupt(&m.0, &spec)?))
    })
}

/// Label connected foreground components; `connectivity` is 4 or 8.
///
/// # Safety
/// `mask` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_relabel_components(
    mask: *const SgMask,
    connectivity: u8,
    out: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        let conn = Connectivity::from_neighbours(connectivity)
            .ok_or_else(|| invalid(format!("connectivity must be 4 or 8, got {connectivity}")))?;
        emit(out, SgMask(relabel_components(&m.0, conn)))
    })
}

/// Pixel metrics of `pred` against `gt`; both are binarized first.
///
/// # Safety
/// `pred` and `gt` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_evaluate(pred: *const SgMask, gt: *const SgMask, out: *mut SgMetrics) -> SgStatus {
    guard(|| {
        let p = borrow(pred, "pred")?;
        let g = borrow(gt, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = evaluate(&p.0.binarize(), &g.0.binarize())?;
        *out = SgMetrics {
            tp: r.counts.tp,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            tn: r.counts.tn,
            dsc: r.dsc,
            jaccard: r.jaccard,
            precision: r.precision,
            recall: r.recall,
            specificity: r.specificity,
        };
        Ok(())
    })
}

/// Tiling of a `width`×`height` raster into `patch`-sized squares.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_plan_grid(width: usize, height: usize, patch: usize, out: *mut SgPatchGrid) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if width == 0 || height == 0 || patch == 0 {
            return Err(invalid("grid dimensions must be positive"));
        }
        let g = plan_grid(width, height, patch);
        *out = SgPatchGrid {
            orig_w: g.orig_w,
            orig_h: g.orig_h,
            patch: g.patch,
            pad_right: g.pad_right,
            pad_bottom: g.pad_bottom,
            rows: g.rows,
            cols: g.cols,
        };
        Ok(())
    })
}

/// Build an image from `width * height * channels` interleaved samples.
///
/// # Safety
/// `pixels` must point to that many readable floats; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_image_new(
    width: usize,
    height: usize,
    channels: usize,
    pixels: *const f32,
    out: *mut *mut SgImage,
) -> SgStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| invalid("dimensions overflow"))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        emit(out, SgImage(MultiChannelImage::unnamed(width, height, channels, data)?))
    })
}

/// # Safety
/// `image` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_image_free(image: *mut SgImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// # Safety
/// `image` must be NULL or a live handle. Returns 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn sg_image_channels(image: *const SgImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.channels())
}

/// Copy the interleaved samples into `out`, which must hold exactly
/// `width * height * channels` values.
///
/// # Safety
/// `image` must be a live handle and `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sg_image_copy_pixels(image: *const SgImage, out: *mut f32, len: usize) -> SgStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let px = img.0.pixels();
        if len != px.len() {
            return Err(Failure(
                SgStatus::DimensionMismatch,
                format!("buffer holds {len} samples, image has {}", px.len()),
            ));
        }
        ptr::copy_nonoverlapping(px.as_ptr(), out, len);
        Ok(())
    })
}

/// Divide each channel by its own `q`-th percentile.
///
/// # Safety
/// `image` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_image_percentile_normalize(
    image: *const SgImage,
    q: f64,
    out: *mut *mut SgImage,
) -> SgStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        emit(out, SgImage(percentile_normalize(&img.0, q)?))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, labels: &[u32]) -> *mut SgMask {
        let mut m = ptr::null_mut();
        assert_eq!(unsafe { sg_mask_new(w, h, labels.as_ptr(), &mut m) }, SgStatus::Ok);
        m
    }

    #[test]
    fn bad_connectivity_is_rejected() {
        let m = mask(2, 1, &[1, 0]);
        let mut out = ptr::null_mut();
        let s = unsafe { sg_relabel_components(m, 6, &mut out) };
        assert_eq!(s, SgStatus::InvalidArgument);
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(sg_last_error()) }.to_str().unwrap();
        assert!(msg.contains("got 6"), "{msg}");
        unsafe { sg_mask_free(m) };
    }

    #[test]
    fn success_clears_last_error() {
        let m = mask(1, 1, &[3]);
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { sg_erase_cells(m, 1.5, 1, &mut out) }, SgStatus::InvalidArgument);
        assert!(!sg_last_error().is_null());
        assert_eq!(unsafe { sg_erase_cells(m, 0.0, 1, &mut out) }, SgStatus::Ok);
        assert!(sg_last_error().is_null());
        assert_eq!(unsafe { sg_mask_cell_count(out) }, 1);
        unsafe {
            sg_mask_free(out);
            sg_mask_free(m);
        }
    }

    #[test]
    fn null_handles() {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { sg_erase_cells(ptr::null(), 0.5, 0, &mut out) }, SgStatus::NullPointer);
        assert_eq!(unsafe { sg_mask_width(ptr::null()) }, 0);
        unsafe { sg_mask_free(ptr::null_mut()) };
    }

    #[test]
    fn grid_panics_become_errors() {
        let mut g = SgPatchGrid::default();
        assert_eq!(unsafe { sg_plan_grid(0, 4, 2, &mut g) }, SgStatus::InvalidArgument);
        assert_eq!(unsafe { sg_plan_grid(5, 4, 2, &mut g) }, SgStatus::Ok);
        assert_eq!((g.rows, g.cols, g.pad_right, g.pad_bottom), (2, 3, 1, 0));
    }
}
