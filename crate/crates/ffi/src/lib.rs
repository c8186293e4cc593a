//! C interface. Handles are opaque pointers owned by the caller and released
//! with the matching `_free`. Every fallible call returns a `GagsStatus`; on
//! failure `gags_last_error` describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gags_core::distill::Decoder;
use gags_core::field::{load_field, Camera, GaussianField};
use gags_core::query::{decode_view, relevancy_map, QueryParams};
use gags_core::splat::render;
use gags_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GagsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Pinhole camera. `rotation` is the row-major world-to-camera rotation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GagsCamera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
}

/// A loaded Gaussian field.
pub struct GagsField {
    field: GaussianField,
}

/// A trained field together with its decoder.
pub struct GagsModel {
    field: GaussianField,
    decoder: Decoder,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> GagsStatus {
    match e {
        Error::Io { .. } | Error::MissingData(_) => GagsStatus::Io,
        Error::Format(_) | Error::Config(_) => GagsStatus::Format,
        Error::ShapeMismatch(_) => GagsStatus::ShapeMismatch,
        Error::Numeric(_) => GagsStatus::Numeric,
        Error::EmptyField | Error::InvalidArgument(_) => GagsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (GagsStatus, String)>) -> GagsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GagsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GagsStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (GagsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GagsStatus, String) {
    (GagsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (GagsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GagsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn camera_arg(c: *const GagsCamera) -> Result<Camera, (GagsStatus, String)> {
    let c = c.as_ref().ok_or_else(|| null("camera"))?;
    let r = c.rotation;
    let cam = Camera {
        width: c.width as usize,
        height: c.height as usize,
        fx: c.fx,
        fy: c.fy,
        cx: c.cx,
        cy: c.cy,
        rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        translation: c.translation,
        near: c.near,
        far: c.far,
    };
    cam.validate().map_err(core_err)?;
    Ok(cam)
}

fn check_len(name: &str, got: usize, need: usize) -> Result<(), (GagsStatus, String)> {
    if got < need {
        return Err((GagsStatus::BufferTooSmall, format!("{name} holds {got} values, {need} needed")));
    }
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gags_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gags_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a PLY field. On success `*out` receives a handle to free with
/// `gags_field_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gags_field_load(path: *const c_char, out: *mut *mut GagsField) -> GagsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let field = load_field(path).map_err(core_err)?;
        *out = Box::into_raw(Box::new(GagsField { field }));
        Ok(())
    })
}

/// # Safety
/// `field` must come from `gags_field_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gags_field_free(field: *mut GagsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of Gaussians, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gags_field_len(field: *const GagsField) -> usize {
    field.as_ref().map_or(0, |f| f.field.len())
}

/// Feature channels per Gaussian, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gags_field_feature_dim(field: *const GagsField) -> usize {
    field.as_ref().map_or(0, |f| f.field.feature_dim())
}

/// Renders the feature image (`height * width * dim`, row-major, channels
/// last), expected depth and final transmittance (`height * width` each).
/// Depth is 0 where no Gaussian covers the pixel. Any output pointer may be
/// null to skip it.
///
/// # Safety
/// Non-null buffers must hold at least the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn gags_render(
    field: *const GagsField,
    camera: *const GagsCamera,
    features: *mut f32,
    features_len: usize,
    depth: *mut f32,
    transmittance: *mut f32,
    pixels_len: usize,
) -> GagsStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.field;
        let cam = camera_arg(camera)?;
        let n = cam.width * cam.height;
        if !features.is_null() {
            check_len("features", features_len, n * f.feature_dim())?;
        }
        if !depth.is_null() || !transmittance.is_null() {
            check_len("pixel buffers", pixels_len, n)?;
        }
        let out = render(f, &cam).map_err(core_err)?;
        if !features.is_null() {
            let dst = std::slice::from_raw_parts_mut(features, n * f.feature_dim());
            dst.iter_mut().zip(out.features.as_slice()).for_each(|(d, s)| *d = *s as f32);
        }
        if !depth.is_null() {
            let dst = std::slice::from_raw_parts_mut(depth, n);
            for (i, d) in dst.iter_mut().enumerate() {
                *d = out.depth_at(i).unwrap_or(0.0) as f32;
            }
        }
        if !transmittance.is_null() {
            let dst = std::slice::from_raw_parts_mut(transmittance, n);
            dst.iter_mut().zip(out.transmittance.as_slice()).for_each(|(d, s)| *d = *s as f32);
        }
        Ok(())
    })
}

/// Loads a trained field and the decoder checkpoint `<dir>/<stem>.json`.
///
/// # Safety
/// String arguments must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gags_model_load(
    field_path: *const c_char,
    decoder_dir: *const c_char,
    decoder_stem: *const c_char,
    out: *mut *mut GagsModel,
) -> GagsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let field = load_field(path_arg(field_path, "field_path")?).map_err(core_err)?;
        let dir = path_arg(decoder_dir, "decoder_dir")?;
        let stem = path_arg(decoder_stem, "decoder_stem")?;
        let decoder = Decoder::load(&dir, &stem.to_string_lossy()).map_err(core_err)?;
        if decoder.input_dim() != field.feature_dim() {
            return Err((
                GagsStatus::ShapeMismatch,
                format!("decoder takes {} features, field has {}", decoder.input_dim(), field.feature_dim()),
            ));
        }
        *out = Box::into_raw(Box::new(GagsModel { field, decoder }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `gags_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gags_model_free(model: *mut GagsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Dimension of the decoded language features, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gags_model_clip_dim(model: *const GagsModel) -> usize {
    model.as_ref().map_or(0, |m| m.decoder.clip_dim())
}

/// Relevancy of a text embedding in one view, smoothed with a `kernel`-wide
/// mean filter and min-max normalized over covered pixels. `canonical` holds
/// `n_canonical` phrase embeddings back to back. `out` receives
/// `height * width` scores (0 where uncovered); `*degenerate` is set to 1
/// when the map has no spread.
///
/// # Safety
/// `text` must hold `dim` values, `canonical` `n_canonical * dim`, `out`
/// `out_len`; `degenerate` may be null.
#[no_mangle]
pub unsafe extern "C" fn gags_model_relevancy(
    model: *const GagsModel,
    camera: *const GagsCamera,
    text: *const f64,
    canonical: *const f64,
    n_canonical: usize,
    dim: usize,
    kernel: u32,
    out: *mut f64,
    out_len: usize,
    degenerate: *mut u8,
) -> GagsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cam = camera_arg(camera)?;
        if text.is_null() || canonical.is_null() || out.is_null() {
            return Err(null("text, canonical or out"));
        }
        check_len("out", out_len, cam.width * cam.height)?;
        let text = std::slice::from_raw_parts(text, dim);
        let canon_flat = std::slice::from_raw_parts(canonical, n_canonical * dim);
        let canon: Vec<&[f64]> = canon_flat.chunks_exact(dim.max(1)).collect();
        let params = QueryParams {
            kernel: kernel as usize,
            ..Default::default()
        };
        let decoded = decode_view(&m.field, &m.decoder, &cam).map_err(core_err)?;
        let map = relevancy_map(&decoded, text, &canon, &params).map_err(core_err)?;
        std::slice::from_raw_parts_mut(out, cam.width * cam.height).copy_from_slice(map.normalized.as_slice());
        if let Some(d) = degenerate.as_mut() {
            *d = u8::from(map.degenerate);
        }
        Ok(())
    })
}
