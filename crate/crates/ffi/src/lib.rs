//! C ABI over the gliding-vertex core.
//!
//! Every fallible call returns a [`GvStatus`]; on anything but `GV_STATUS_OK` a
//! description is kept per thread and can be fetched with
//! [`gv_last_error_message`]. Outputs are written only on success. Handles
//! ([`GvDetectionSet`], [`GvEvaluator`]) are opaque and must be released with
//! their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gliding_vertex::dataio::{DetRecord, GtRecord, PerImage};
use gliding_vertex::eval::{mean_average_precision, ApMode};
use gliding_vertex::geometry::{HBox, Point, Quad};
use gliding_vertex::nms::{oriented_nms_per_class, ScoredPoly};
use gliding_vertex::representation::{decode, encode, select, GlidingRep, SelectionPolicy};
use gliding_vertex::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DegenerateGeometry = 3,
    IndexOutOfRange = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GvPoint {
    pub x: f64,
    pub y: f64,
}

/// Horizontal box as center and size, the four gliding offsets and the
/// obliquity factor.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GvGlidingRep {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub alpha: [f64; 4],
    pub r: f64,
}

/// A growable list of scored, classed quadrilaterals.
pub struct GvDetectionSet {
    dets: Vec<ScoredPoly>,
}

/// Accumulates ground truth and detections over images for mAP.
pub struct GvEvaluator {
    gts: PerImage<GtRecord>,
    dets: PerImage<DetRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> GvStatus {
    match e {
        Error::DegenerateGeometry(_) => GvStatus::DegenerateGeometry,
        _ => GvStatus::InvalidInput,
    }
}

fn fail(status: GvStatus, msg: impl Into<String>) -> GvStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), GvStatus>) -> GvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GvStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GvStatus::Internal, "internal panic"),
    }
}

fn core_err(e: Error) -> GvStatus {
    fail(status_of(&e), e.to_string())
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), GvStatus> {
    if p.is_null() {
        Err(fail(GvStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_quad(p: *const GvPoint) -> Result<Quad, GvStatus> {
    nonnull(p, "quad")?;
    let pts = std::slice::from_raw_parts(p, 4);
    Quad::new([0, 1, 2, 3].map(|i| Point::new(pts[i].x, pts[i].y))).map_err(core_err)
}

unsafe fn write_quad(q: &Quad, out: *mut GvPoint) {
    let dst = std::slice::from_raw_parts_mut(out, 4);
    for (d, v) in dst.iter_mut().zip(q.vertices()) {
        *d = GvPoint { x: v.x, y: v.y };
    }
}

fn to_rep(r: &GvGlidingRep) -> Result<GlidingRep, GvStatus> {
    let hbox = HBox::new(r.x, r.y, r.w, r.h).map_err(core_err)?;
    GlidingRep::new(hbox, r.alpha, r.r).map_err(core_err)
}

unsafe fn read_id(p: *const c_char) -> Result<String, GvStatus> {
    nonnull(p, "image_id")?;
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(GvStatus::InvalidInput, "image_id is not UTF-8"))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn gv_status_name(status: GvStatus) -> *const c_char {
    let s: &'static CStr = match status {
        GvStatus::Ok => c"ok",
        GvStatus::NullPointer => c"null-pointer",
        GvStatus::InvalidInput => c"invalid-input",
        GvStatus::DegenerateGeometry => c"degenerate-geometry",
        GvStatus::IndexOutOfRange => c"index-out-of-range",
        GvStatus::Internal => c"internal",
    };
    s.as_ptr()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gv_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// Encodes a convex quadrilateral (4 points, any order or orientation).
///
/// # Safety
/// `quad` must point to 4 points and `out` to one writable rep.
#[no_mangle]
pub unsafe extern "C" fn gv_encode(quad: *const GvPoint, out: *mut GvGlidingRep) -> GvStatus {
    guard(|| {
        nonnull(out, "out")?;
        let rep = encode(&read_quad(quad)?).map_err(core_err)?;
        *out = GvGlidingRep {
            x: rep.hbox.x,
            y: rep.hbox.y,
            w: rep.hbox.w,
            h: rep.hbox.h,
            alpha: rep.alpha,
            r: rep.r,
        };
        Ok(())
    })
}

/// Decodes to the oriented quadrilateral; α and r are clamped to [0, 1].
///
/// # Safety
/// `rep` must point to one rep and `out` to 4 writable points.
#[no_mangle]
pub unsafe extern "C" fn gv_decode(rep: *const GvGlidingRep, out: *mut GvPoint) -> GvStatus {
    guard(|| {
        nonnull(rep, "rep")?;
        nonnull(out, "out")?;
        let q = decode(&to_rep(&*rep)?);
        write_quad(&q, out);
        Ok(())
    })
}

/// The horizontal box when `r > t_r`, the decoded quadrilateral otherwise.
///
/// # Safety
/// As [`gv_decode`].
#[no_mangle]
pub unsafe extern "C" fn gv_select(rep: *const GvGlidingRep, t_r: f64, out: *mut GvPoint) -> GvStatus {
    guard(|| {
        nonnull(rep, "rep")?;
        nonnull(out, "out")?;
        let policy = SelectionPolicy::new(t_r).map_err(core_err)?;
        let q = select(&to_rep(&*rep)?, &policy);
        write_quad(&q, out);
        Ok(())
    })
}

/// IoU of two convex quadrilaterals.
///
/// # Safety
/// `a` and `b` must each point to 4 points; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn gv_iou(a: *const GvPoint, b: *const GvPoint, out: *mut f64) -> GvStatus {
    guard(|| {
        nonnull(out, "out")?;
        let (qa, qb) = (read_quad(a)?, read_quad(b)?);
        *out = qa.iou(&qb);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn gv_detection_set_new() -> *mut GvDetectionSet {
    Box::into_raw(Box::new(GvDetectionSet { dets: Vec::new() }))
}

/// # Safety
/// `set` must come from [`gv_detection_set_new`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn gv_detection_set_free(set: *mut GvDetectionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a live handle; `quad` must point to 4 points.
#[no_mangle]
pub unsafe extern "C" fn gv_detection_set_push(
    set: *mut GvDetectionSet,
    quad: *const GvPoint,
    score: f64,
    class_id: u32,
) -> GvStatus {
    guard(|| {
        nonnull(set, "set")?;
        if !score.is_finite() {
            return Err(fail(GvStatus::InvalidInput, "non-finite score"));
        }
        let poly = read_quad(quad)?;
        (*set).dets.push(ScoredPoly {
            poly,
            score,
            class: class_id as usize,
        });
        Ok(())
    })
}

/// Replaces the contents with the per-class NMS survivors, grouped by class
/// id, descending score within a class.
///
/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gv_detection_set_nms(set: *mut GvDetectionSet, iou_thresh: f64) -> GvStatus {
    guard(|| {
        nonnull(set, "set")?;
        if !(0.0..=1.0).contains(&iou_thresh) {
            return Err(fail(GvStatus::InvalidInput, format!("iou_thresh = {iou_thresh} outside [0, 1]")));
        }
        let s = &mut *set;
        s.dets = oriented_nms_per_class(&s.dets, iou_thresh);
        Ok(())
    })
}

/// Number of detections; 0 for a null handle.
///
/// # Safety
/// `set` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gv_detection_set_len(set: *const GvDetectionSet) -> usize {
    if set.is_null() {
        0
    } else {
        (*set).dets.len()
    }
}

/// # Safety
/// `set` must be a live handle; `quad` must point to 4 writable points;
/// `score` and `class_id` may be null.
#[no_mangle]
pub unsafe extern "C" fn gv_detection_set_get(
    set: *const GvDetectionSet,
    index: usize,
    quad: *mut GvPoint,
    score: *mut f64,
    class_id: *mut u32,
) -> GvStatus {
    guard(|| {
        nonnull(set, "set")?;
        nonnull(quad, "quad")?;
        let s = &*set;
        let d = s
            .dets
            .get(index)
            .ok_or_else(|| fail(GvStatus::IndexOutOfRange, format!("index {index} of {}", s.dets.len())))?;
        write_quad(&d.poly, quad);
        if !score.is_null() {
            *score = d.score;
        }
        if !class_id.is_null() {
            *class_id = d.class as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn gv_evaluator_new() -> *mut GvEvaluator {
    Box::into_raw(Box::new(GvEvaluator {
        gts: PerImage::new(),
        dets: PerImage::new(),
    }))
}

/// # Safety
/// `ev` must come from [`gv_evaluator_new`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn gv_evaluator_free(ev: *mut GvEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// # Safety
/// `ev` must be a live handle, `image_id` a NUL-terminated string and `quad`
/// 4 points.
#[no_mangle]
pub unsafe extern "C" fn gv_evaluator_add_gt(
    ev: *mut GvEvaluator,
    image_id: *const c_char,
    quad: *const GvPoint,
    class_id: u32,
    difficult: bool,
) -> GvStatus {
    guard(|| {
        nonnull(ev, "evaluator")?;
        let id = read_id(image_id)?;
        let quad = read_quad(quad)?;
        (*ev).gts.entry(id).or_default().push(GtRecord {
            quad,
            class: class_id.to_string(),
            difficult,
        });
        Ok(())
    })
}

/// # Safety
/// As [`gv_evaluator_add_gt`].
#[no_mangle]
pub unsafe extern "C" fn gv_evaluator_add_det(
    ev: *mut GvEvaluator,
    image_id: *const c_char,
    quad: *const GvPoint,
    score: f64,
    class_id: u32,
) -> GvStatus {
    guard(|| {
        nonnull(ev, "evaluator")?;
        if !score.is_finite() {
            return Err(fail(GvStatus::InvalidInput, "non-finite score"));
        }
        let id = read_id(image_id)?;
        let quad = read_quad(quad)?;
        (*ev).dets.entry(id).or_default().push(DetRecord {
            class: class_id.to_string(),
            score,
            quad,
        });
        Ok(())
    })
}

/// Mean AP over classes with at least one non-difficult ground truth.
/// `voc07` non-zero selects 11-point interpolation, zero the all-points envelope.
///
/// # Safety
/// `ev` must be a live handle and `out` one writable double.
#[no_mangle]
pub unsafe extern "C" fn gv_evaluator_map(ev: *const GvEvaluator, iou_thresh: f64, voc07: i32, out: *mut f64) -> GvStatus {
    guard(|| {
        nonnull(ev, "evaluator")?;
        nonnull(out, "out")?;
        if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
            return Err(fail(GvStatus::InvalidInput, format!("iou_thresh = {iou_thresh} outside (0, 1]")));
        }
        let mode = if voc07 != 0 { ApMode::Voc07 } else { ApMode::AllPoints };
        *out = mean_average_precision(&(*ev).dets, &(*ev).gts, iou_thresh, mode).map;
        Ok(())
    })
}
