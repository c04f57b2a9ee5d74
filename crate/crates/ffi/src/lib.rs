//! C ABI over the scoring side of `ebm-anomaly`: load a checkpoint and a
//! stats file, compute energies, gradient maps and anomaly scores, and
//! compute AUROC.
//!
//! Every fallible function returns an [`EbmStatus`]; on failure a message is
//! available from [`ebm_last_error`] on the same thread. Images are
//! row-major `h × w × c` arrays of `double` in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ebm_anomaly::eval::{auroc, LabeledScores};
use ebm_anomaly::nn::{checkpoint, ModelParams};
use ebm_anomaly::scoring::{gradient_map, score_image, NormOrder, PixelStats};
use ebm_anomaly::{EbmError, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    SingleClass = 7,
    Diverged = 8,
    Dataset = 9,
    Image = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Loaded network parameters.
pub struct EbmModel {
    params: ModelParams,
}

/// Loaded per-pixel gradient statistics.
pub struct EbmStats {
    stats: PixelStats,
}

/// Image-level scores of one image.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EbmImageScores {
    pub energy: f64,
    pub raw: f64,
    /// Valid only when `has_standardized` is nonzero.
    pub standardized: f64,
    pub has_standardized: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &EbmError) -> EbmStatus {
    match e.kind() {
        "shape_mismatch" => EbmStatus::ShapeMismatch,
        "non_finite" => EbmStatus::NonFinite,
        "io" => EbmStatus::Io,
        "format" => EbmStatus::Format,
        "single_class" => EbmStatus::SingleClass,
        "diverged" => EbmStatus::Diverged,
        "dataset" => EbmStatus::Dataset,
        "image" => EbmStatus::Image,
        _ => EbmStatus::InvalidArgument,
    }
}

struct Failure(EbmStatus, String);

impl From<EbmError> for Failure {
    fn from(e: EbmError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EbmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> EbmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EbmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            EbmStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(EbmStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(data: *const f64, h: usize, w: usize, c: usize) -> Result<Tensor, Failure> {
    if data.is_null() {
        return Err(null("image"));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Failure(
                EbmStatus::InvalidArgument,
                format!("invalid image shape {h}x{w}x{c}"),
            )
        })?;
    let values = std::slice::from_raw_parts(data, n).to_vec();
    Ok(Tensor::new(vec![h, w, c], values)?)
}

unsafe fn copy_out(
    values: &[f64],
    out: *mut f64,
    out_len: usize,
    what: &str,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    if out_len < values.len() {
        return Err(Failure(
            EbmStatus::BufferTooSmall,
            format!(
                "{what} needs {} elements, buffer holds {out_len}",
                values.len()
            ),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn model_ref<'a>(model: *const EbmModel) -> Result<&'a EbmModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ebm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ebm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an `EBMCKPT1` checkpoint. Free the handle with [`ebm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_load(path: *const c_char, out: *mut *mut EbmModel) -> EbmStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = checkpoint::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EbmModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ebm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_free(model: *mut EbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input shape the network reduces to a single energy.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_model_input_shape(
    model: *const EbmModel,
    h: *mut usize,
    w: *mut usize,
    c: *mut usize,
) -> EbmStatus {
    guarded(|| {
        let m = model_ref(model)?;
        if h.is_null() || w.is_null() || c.is_null() {
            return Err(null("shape output"));
        }
        let t = m.params.topology();
        let size = t.minimal_input_size().ok_or_else(|| {
            Failure(
                EbmStatus::InvalidArgument,
                "topology admits no square input".into(),
            )
        })?;
        *h = size;
        *w = size;
        *c = t.input_channels();
        Ok(())
    })
}

/// Scalar energy `E(x)`.
///
/// # Safety
/// `image` must hold `h * w * c` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_energy(
    model: *const EbmModel,
    image: *const f64,
    h: usize,
    w: usize,
    c: usize,
    out: *mut f64,
) -> EbmStatus {
    guarded(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = image_arg(image, h, w, c)?;
        *out = m.params.forward_energy(&x)?;
        Ok(())
    })
}

/// Gradient map `−∂E/∂x`, written as `h * w * c` doubles.
///
/// # Safety
/// `image` must hold `h * w * c` doubles and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn ebm_gradient_map(
    model: *const EbmModel,
    image: *const f64,
    h: usize,
    w: usize,
    c: usize,
    out: *mut f64,
    out_len: usize,
) -> EbmStatus {
    guarded(|| {
        let m = model_ref(model)?;
        let x = image_arg(image, h, w, c)?;
        let g = gradient_map(&m.params, &x)?;
        copy_out(g.values.data(), out, out_len, "gradient map")
    })
}

/// Loads an `EBMSTAT1` statistics file. Free with [`ebm_stats_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebm_stats_load(path: *const c_char, out: *mut *mut EbmStats) -> EbmStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let stats = PixelStats::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EbmStats { stats }));
        Ok(())
    })
}

/// # Safety
/// `stats` must come from [`ebm_stats_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_stats_free(stats: *mut EbmStats) {
    if !stats.is_null() {
        drop(Box::from_raw(stats));
    }
}

/// Scores one image. `stats` may be null, in which case only the energy and
/// raw scores are produced. `raw_map` and `std_map` are optional `h * w`
/// outputs for the pixel score maps; `std_map` requires `stats`.
///
/// # Safety
/// `image` must hold `h * w * c` doubles; non-null map buffers must hold
/// `map_len` doubles; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ebm_score_image(
    model: *const EbmModel,
    stats: *const EbmStats,
    image: *const f64,
    h: usize,
    w: usize,
    c: usize,
    r: u32,
    raw_map: *mut f64,
    std_map: *mut f64,
    map_len: usize,
    out: *mut EbmImageScores,
) -> EbmStatus {
    guarded(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = NormOrder::try_from(r)?;
        let x = image_arg(image, h, w, c)?;
        let s = stats.as_ref().map(|s| &s.stats);
        let scores = score_image(&m.params, s, &x, r)?;
        if !raw_map.is_null() {
            copy_out(scores.raw_map.values.data(), raw_map, map_len, "raw map")?;
        }
        if !std_map.is_null() {
            let map = scores.standardized_map.as_ref().ok_or_else(|| {
                Failure(
                    EbmStatus::InvalidArgument,
                    "standardized map requested without stats".into(),
                )
            })?;
            copy_out(map.values.data(), std_map, map_len, "standardized map")?;
        }
        *out = EbmImageScores {
            energy: scores.energy.value,
            raw: scores.raw.value,
            standardized: scores.standardized.map_or(0.0, |s| s.value),
            has_standardized: scores.standardized.is_some() as i32,
        };
        Ok(())
    })
}

/// AUROC of `n` scores against labels (nonzero = anomalous), ties counted
/// as one half.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebm_auroc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> EbmStatus {
    guarded(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let s = std::slice::from_raw_parts(scores, n).to_vec();
        let l = std::slice::from_raw_parts(labels, n)
            .iter()
            .map(|&v| v != 0)
            .collect();
        *out = auroc(&LabeledScores::new(s, l)?)?;
        Ok(())
    })
}
