//! C ABI over smoothstroke.
//!
//! Every fallible call returns an [`SsStatus`]; on failure the message is kept
//! per thread and read with [`ss_last_error`]. Handles are opaque and must be
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use smoothstroke::bezier::{BezierChain, ConversionPipeline};
use smoothstroke::raster::RasterConfig;
use smoothstroke::scene::Scene;
use smoothstroke::smoothing::{smooth_cost, GramMode, GramOperator};
use smoothstroke::spline::{build_spline, KeyPointPath, Point, SplineCurve};
use smoothstroke::svg::{export_svg, import_svg};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Output buffer too small; the required size has been written.
    BufferTooSmall = 3,
    Spline = 4,
    Smoothing = 5,
    Scene = 6,
    Io = 7,
    Panic = 8,
}

/// Spline built from key-points, with its cubic Bézier chain.
pub struct SsSpline {
    spline: SplineCurve,
    chain: BezierChain,
}

/// Smoothing operator bound to a spline's control-point layout.
pub struct SsGram {
    op: GramOperator,
}

pub struct SsScene {
    scene: Scene,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SsStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(SsStatus::NullPointer, format!("{what} is null"))
    }
    fn arg(msg: impl Into<String>) -> Self {
        Failure(SsStatus::InvalidArgument, msg.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SsStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::arg(format!("{what} is not UTF-8")))
}

/// `count` points of 3 doubles each.
unsafe fn points<'a>(p: *const f64, count: usize, what: &str) -> Result<&'a [Point], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p.cast::<Point>(), count))
}

fn spline_err(e: impl std::fmt::Display) -> Failure {
    Failure(SsStatus::Spline, e.to_string())
}

fn scene_err(e: impl std::fmt::Display) -> Failure {
    Failure(SsStatus::Scene, e.to_string())
}

/// Copies `data` into `buf` if it fits; `needed` always receives its length.
unsafe fn fill<T: Copy>(data: &[T], buf: *mut T, cap: usize, needed: *mut usize) -> Result<(), Failure> {
    if let Some(n) = needed.as_mut() {
        *n = data.len();
    }
    if data.len() > cap {
        return Err(Failure(SsStatus::BufferTooSmall, format!("need {} elements, buffer holds {cap}", data.len())));
    }
    if !data.is_empty() {
        if buf.is_null() {
            return Err(Failure::null("buffer"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    }
    Ok(())
}

// ---------------------------------------------------------------- errors

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- splines

/// Builds a spline of the given degree from `count` key-points laid out as
/// `x, y, r` triples.
///
/// # Safety
/// `keypoints` must hold `3 * count` doubles; `out_spline` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_new(
    keypoints: *const f64,
    count: usize,
    degree: usize,
    closed: bool,
    out_spline: *mut *mut SsSpline,
) -> SsStatus {
    guard(|| {
        let slot = out(out_spline, "out_spline")?;
        *slot = ptr::null_mut();
        let kp = points(keypoints, count, "keypoints")?.to_vec();
        if kp.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Failure::arg("key-points must be finite"));
        }
        let spline = build_spline(&KeyPointPath::new(kp, closed, degree)).map_err(spline_err)?;
        let chain = ConversionPipeline::for_spline(&spline)
            .and_then(|p| p.to_cubic(spline.control_points()))
            .map_err(spline_err)?;
        *slot = Box::into_raw(Box::new(SsSpline { spline, chain }));
        Ok(())
    })
}

/// # Safety
/// `spline` must come from [`ss_spline_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_free(spline: *mut SsSpline) {
    if !spline.is_null() {
        drop(Box::from_raw(spline));
    }
}

/// Parameter domain `[lo, hi]`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_domain(spline: *const SsSpline, lo: *mut f64, hi: *mut f64) -> SsStatus {
    guard(|| {
        let s = as_ref(spline, "spline")?;
        let (a, b) = s.spline.domain();
        *out(lo, "lo")? = a;
        *out(hi, "hi")? = b;
        Ok(())
    })
}

/// Evaluates `x, y, r` at `u` into `point[3]`.
///
/// # Safety
/// `point` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_eval(spline: *const SsSpline, u: f64, point: *mut f64) -> SsStatus {
    guard(|| {
        let s = as_ref(spline, "spline")?;
        if point.is_null() {
            return Err(Failure::null("point"));
        }
        let p = s.spline.eval(u).map_err(spline_err)?;
        ptr::copy_nonoverlapping(p.as_ptr(), point, 3);
        Ok(())
    })
}

/// Control points (`3 * n` doubles). `needed` receives the double count.
///
/// # Safety
/// `buf` must hold `cap` doubles; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_control(spline: *const SsSpline, buf: *mut f64, cap: usize, needed: *mut usize) -> SsStatus {
    guard(|| {
        let s = as_ref(spline, "spline")?;
        let flat: Vec<f64> = s.spline.control_points().iter().flatten().copied().collect();
        fill(&flat, buf, cap, needed)
    })
}

/// Cubic Bézier chain as `3 * segments + 1` points of `x, y, r`; consecutive
/// segments share end points. `needed` receives the double count.
///
/// # Safety
/// `buf` must hold `cap` doubles; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_spline_bezier(spline: *const SsSpline, buf: *mut f64, cap: usize, needed: *mut usize) -> SsStatus {
    guard(|| {
        let s = as_ref(spline, "spline")?;
        let flat: Vec<f64> = s.chain.points().iter().flatten().copied().collect();
        fill(&flat, buf, cap, needed)
    })
}

// ---------------------------------------------------------------- smoothing

/// Smoothing operator of derivative order `order` for `spline`'s layout;
/// `pspline` selects the difference-penalty approximation.
///
/// # Safety
/// `spline` must be live; `out_gram` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_gram_new(spline: *const SsSpline, order: usize, pspline: bool, out_gram: *mut *mut SsGram) -> SsStatus {
    guard(|| {
        let slot = out(out_gram, "out_gram")?;
        *slot = ptr::null_mut();
        let s = as_ref(spline, "spline")?;
        let mode = if pspline { GramMode::Pspline } else { GramMode::Exact };
        let op = GramOperator::for_spline(&s.spline, order, mode).map_err(|e| Failure(SsStatus::Smoothing, e.to_string()))?;
        *slot = Box::into_raw(Box::new(SsGram { op }));
        Ok(())
    })
}

/// # Safety
/// `gram` must come from [`ss_gram_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ss_gram_free(gram: *mut SsGram) {
    if !gram.is_null() {
        drop(Box::from_raw(gram));
    }
}

/// Number of control points the operator expects.
///
/// # Safety
/// `gram` must be live.
#[no_mangle]
pub unsafe extern "C" fn ss_gram_control_count(gram: *const SsGram, count: *mut usize) -> SsStatus {
    guard(|| {
        *out(count, "count")? = as_ref(gram, "gram")?.op.control_count();
        Ok(())
    })
}

/// Smoothing cost of `count` control points. If `grad` is non-null it
/// receives `3 * count` doubles.
///
/// # Safety
/// `control` holds `3 * count` doubles; `grad` is null or the same size.
#[no_mangle]
pub unsafe extern "C" fn ss_gram_cost(
    gram: *const SsGram,
    control: *const f64,
    count: usize,
    value: *mut f64,
    grad: *mut f64,
) -> SsStatus {
    guard(|| {
        let g = as_ref(gram, "gram")?;
        let c = points(control, count, "control")?;
        let (v, gr) = smooth_cost(c, &g.op).map_err(|e| Failure(SsStatus::Smoothing, e.to_string()))?;
        *out(value, "value")? = v;
        if !grad.is_null() {
            ptr::copy_nonoverlapping(gr.as_ptr().cast::<f64>(), grad, 3 * gr.len());
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- scenes

/// Parses a scene from its JSON form.
///
/// # Safety
/// `json` is a NUL-terminated string; `out_scene` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_from_json(json: *const c_char, out_scene: *mut *mut SsScene) -> SsStatus {
    guard(|| {
        let slot = out(out_scene, "out_scene")?;
        *slot = ptr::null_mut();
        let scene = Scene::from_json(c_str(json, "json")?).map_err(scene_err)?;
        *slot = Box::into_raw(Box::new(SsScene { scene }));
        Ok(())
    })
}

/// Loads a scene file (JSON, or an SVG written by the exporter).
///
/// # Safety
/// `path` is a NUL-terminated string; `out_scene` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_load(path: *const c_char, out_scene: *mut *mut SsScene) -> SsStatus {
    guard(|| {
        let slot = out(out_scene, "out_scene")?;
        *slot = ptr::null_mut();
        let path = std::path::Path::new(c_str(path, "path")?);
        let text = std::fs::read_to_string(path).map_err(|e| Failure(SsStatus::Io, format!("{}: {e}", path.display())))?;
        let scene = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
            import_svg(&text).map_err(scene_err)?
        } else {
            Scene::from_json(&text).map_err(scene_err)?
        };
        *slot = Box::into_raw(Box::new(SsScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_free(scene: *mut SsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Canvas size and channel count (1 gray, 3 RGB).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_size(scene: *const SsScene, width: *mut usize, height: *mut usize, channels: *mut usize) -> SsStatus {
    guard(|| {
        let s = &as_ref(scene, "scene")?.scene;
        *out(width, "width")? = s.width;
        *out(height, "height")? = s.height;
        *out(channels, "channels")? = s.channels();
        Ok(())
    })
}

/// Renders to row-major interleaved doubles in `[0, 1]`, `per_segment`
/// samples per Bézier segment.
///
/// # Safety
/// `buf` holds `cap` doubles; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_render(
    scene: *const SsScene,
    per_segment: usize,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> SsStatus {
    guard(|| {
        let s = as_ref(scene, "scene")?;
        if per_segment == 0 {
            return Err(Failure::arg("per_segment must be positive"));
        }
        let canvas = s.scene.render(&RasterConfig::default(), per_segment).map_err(scene_err)?;
        fill(&canvas.data, buf, cap, needed)
    })
}

/// Writes the SVG document, NUL-terminated. `needed` receives the byte
/// count including the terminator.
///
/// # Safety
/// `buf` holds `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_scene_to_svg(
    scene: *const SsScene,
    per_segment: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SsStatus {
    guard(|| {
        let s = as_ref(scene, "scene")?;
        if per_segment == 0 {
            return Err(Failure::arg("per_segment must be positive"));
        }
        let svg = export_svg(&s.scene, per_segment).map_err(scene_err)?;
        let mut bytes: Vec<c_char> = svg.bytes().map(|b| b as c_char).collect();
        bytes.push(0);
        fill(&bytes, buf, cap, needed)
    })
}
