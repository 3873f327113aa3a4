//! C ABI over `fabric-motif`.
//!
//! Every fallible function returns an [`FmStatus`]; on failure a message is
//! available from [`fm_last_error`] on the same thread. Objects are opaque
//! handles released with their `*_free` function. Passing a null handle to a
//! `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fabric_motif::anomaly::{calibrate_threshold, defect_probability_map, ProbabilityMap};
use fabric_motif::feature_bank::{build_model, load_model, save_model, Aggregation, FilterSize, Model, TrainConfig};
use fabric_motif::imaging::{load_gray, GrayImage};
use fabric_motif::segmentation::{segment, BinaryMask, SegmentParams};
use fabric_motif::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Degenerate = 4,
    Dimension = 5,
    Parameter = 6,
    PeriodEstimation = 7,
    Training = 8,
    ModelFormat = 9,
    Model = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Training settings. `filter_size == 0` estimates it from the image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FmTrainConfig {
    pub filter_size: u32,
    pub num_layers: u32,
    pub patch_stride: u32,
    pub layer_stride: u32,
    pub similarity_threshold: f64,
    pub contrast_threshold: f64,
    pub seed: u64,
    /// Nonzero applies histogram equalization.
    pub equalize: u8,
    /// 0 = per-pixel maximum, 1 = mean.
    pub aggregation: u8,
}

pub struct FmImage(GrayImage);
pub struct FmModel(Model);
pub struct FmMap(ProbabilityMap);
pub struct FmMask(BinaryMask);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn status_of(e: &Error) -> FmStatus {
    match e {
        Error::Io { .. } => FmStatus::Io,
        Error::Degenerate(_) => FmStatus::Degenerate,
        Error::Dimension(_) => FmStatus::Dimension,
        Error::Parameter(_) => FmStatus::Parameter,
        Error::PeriodEstimation(_) => FmStatus::PeriodEstimation,
        Error::Training(_) => FmStatus::Training,
        Error::ModelFormat(_) => FmStatus::ModelFormat,
        Error::Model(_) => FmStatus::Model,
    }
}

struct Failure(FmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FmStatus::NullArgument, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(FmStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_image_load(path: *const c_char, out: *mut *mut FmImage) -> FmStatus {
    guard(|| put(out, FmImage(load_gray(path_arg(path)?)?)))
}

/// Copies `width * height` row-major intensities.
///
/// # Safety
/// `pixels` must point to `width * height` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_image_from_pixels(
    width: usize,
    height: usize,
    pixels: *const f64,
    out: *mut *mut FmImage,
) -> FmStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure(FmStatus::Dimension, "image size overflows".into()))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        put(out, FmImage(GrayImage::new(width, height, data)?))
    })
}

/// # Safety
/// `image` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_image_width(image: *const FmImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `image` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_image_height(image: *const FmImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `image` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fm_image_free(image: *mut FmImage) {
    free(image)
}

#[no_mangle]
pub extern "C" fn fm_train_config_default() -> FmTrainConfig {
    let d = TrainConfig::default();
    FmTrainConfig {
        filter_size: 0,
        num_layers: d.num_layers as u32,
        patch_stride: d.patch_stride as u32,
        layer_stride: d.layer_stride as u32,
        similarity_threshold: d.similarity_threshold,
        contrast_threshold: d.contrast_threshold,
        seed: d.seed,
        equalize: u8::from(d.equalize),
        aggregation: 0,
    }
}

fn train_config(c: &FmTrainConfig) -> Result<TrainConfig, Failure> {
    let aggregation = match c.aggregation {
        0 => Aggregation::Max,
        1 => Aggregation::Mean,
        other => {
            return Err(Failure(FmStatus::Parameter, format!("unknown aggregation {other}")));
        }
    };
    Ok(TrainConfig {
        filter_size: match c.filter_size {
            0 => FilterSize::Auto,
            n => FilterSize::Fixed(n as usize),
        },
        num_layers: c.num_layers as usize,
        patch_stride: c.patch_stride as usize,
        layer_stride: c.layer_stride as usize,
        similarity_threshold: c.similarity_threshold,
        contrast_threshold: c.contrast_threshold,
        seed: c.seed,
        equalize: c.equalize != 0,
        aggregation,
        ..TrainConfig::default()
    })
}

/// Trains on one defect-free image. With `calibrate` nonzero the anomaly
/// threshold is also calibrated on that image. `config` may be null for
/// defaults.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_model_train(
    image: *const FmImage,
    config: *const FmTrainConfig,
    calibrate: u8,
    out: *mut *mut FmModel,
) -> FmStatus {
    guard(|| {
        let raw = &handle(image, "image")?.0;
        let cfg = match config.as_ref() {
            Some(c) => train_config(c)?,
            None => TrainConfig::default(),
        };
        let (mut model, _) = build_model(raw, &cfg)?;
        if calibrate != 0 {
            let pre = model.preprocess(raw)?;
            calibrate_threshold(&mut model, &pre)?;
        }
        put(out, FmModel(model))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_model_load(path: *const c_char, out: *mut *mut FmModel) -> FmStatus {
    guard(|| put(out, FmModel(load_model(path_arg(path)?)?)))
}

/// # Safety
/// `model` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_model_save(model: *const FmModel, path: *const c_char) -> FmStatus {
    guard(|| Ok(save_model(&handle(model, "model")?.0, path_arg(path)?)?))
}

/// Recalibrates the anomaly threshold on `image` and writes it to `out`
/// when `out` is not null.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn fm_model_calibrate(model: *mut FmModel, image: *const FmImage, out: *mut f64) -> FmStatus {
    guard(|| {
        let model = &mut model.as_mut().ok_or_else(|| null("model"))?.0;
        let pre = model.preprocess(&handle(image, "image")?.0)?;
        let t = calibrate_threshold(model, &pre)?;
        if let Some(o) = out.as_mut() {
            *o = t;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_model_anomaly_threshold(model: *const FmModel, out: *mut f64) -> FmStatus {
    guard(|| {
        let t = handle(model, "model")?
            .0
            .anomaly_threshold
            .ok_or_else(|| Failure(FmStatus::Model, "model is not calibrated".into()))?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = t;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_model_feature_count(model: *const FmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.feature_count())
}

/// Feature count times the squared filter size, summed over layers.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_model_parameter_count(model: *const FmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.parameter_count())
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_model_filter_size(model: *const FmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.filter_size())
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fm_model_free(model: *mut FmModel) {
    free(model)
}

/// Defect probability map of a raw test image. A NaN `anomaly_threshold`
/// uses the model's calibrated value; a NaN `sigma` uses the default spread.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_detect(
    model: *const FmModel,
    image: *const FmImage,
    anomaly_threshold: f64,
    sigma: f64,
    out: *mut *mut FmMap,
) -> FmStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let pre = model.preprocess(&handle(image, "image")?.0)?;
        let threshold = (!anomaly_threshold.is_nan()).then_some(anomaly_threshold);
        let sigma = (!sigma.is_nan()).then_some(sigma);
        put(out, FmMap(defect_probability_map(model, &pre, threshold, sigma)?))
    })
}

/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_map_width(map: *const FmMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.width)
}

/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_map_height(map: *const FmMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.height)
}

/// Copies the row-major values into `buffer`, which holds `len` doubles.
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_map_values(map: *const FmMap, buffer: *mut f64, len: usize) -> FmStatus {
    guard(|| {
        let values = &handle(map, "map")?.0.values;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if len < values.len() {
            return Err(Failure(
                FmStatus::BufferTooSmall,
                format!("buffer holds {len} values, map has {}", values.len()),
            ));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
        Ok(())
    })
}

/// Writes a 16-bit PNG.
///
/// # Safety
/// `map` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_map_save(map: *const FmMap, path: *const c_char) -> FmStatus {
    guard(|| Ok(handle(map, "map")?.0.save_png16(path_arg(path)?)?))
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fm_map_free(map: *mut FmMap) {
    free(map)
}

/// Two-dimensional maximum entropy binarization followed by an opening.
/// Zero for any size argument selects its default.
///
/// # Safety
/// `map` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fm_segment(
    map: *const FmMap,
    levels: usize,
    neighborhood: usize,
    se: usize,
    out: *mut *mut FmMask,
) -> FmStatus {
    guard(|| {
        let d = SegmentParams::default();
        let or = |v: usize, fallback: usize| if v == 0 { fallback } else { v };
        let params = SegmentParams {
            levels: or(levels, d.levels),
            neighborhood: or(neighborhood, d.neighborhood),
            se: or(se, d.se),
        };
        put(out, FmMask(segment(&handle(map, "map")?.0, &params)?))
    })
}

/// Number of defective pixels.
///
/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_count(mask: *const FmMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

/// Copies the mask as 0/1 bytes, row-major.
///
/// # Safety
/// `buffer` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_values(mask: *const FmMask, buffer: *mut u8, len: usize) -> FmStatus {
    guard(|| {
        let values = &handle(mask, "mask")?.0.values;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if len < values.len() {
            return Err(Failure(
                FmStatus::BufferTooSmall,
                format!("buffer holds {len} bytes, mask has {}", values.len()),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buffer, values.len());
        for (o, &v) in out.iter_mut().zip(values) {
            *o = u8::from(v);
        }
        Ok(())
    })
}

/// Writes an 8-bit image, 255 for defective pixels.
///
/// # Safety
/// `mask` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_save(mask: *const FmMask, path: *const c_char) -> FmStatus {
    guard(|| Ok(handle(mask, "mask")?.0.save(path_arg(path)?)?))
}

/// # Safety
/// `mask` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fm_mask_free(mask: *mut FmMask) {
    free(mask)
}
