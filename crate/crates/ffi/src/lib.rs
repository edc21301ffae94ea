//! C ABI over `totr-core`.
//!
//! Objects are opaque handles created by `*_load` / `*_new` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`TotrStatus`]; on failure [`totr_last_error`] describes the problem.
//! Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use totr_core::cycle::{extend_reference, ReferenceCycle};
use totr_core::eval::io::{load_json, load_skeleton, parse_skeleton};
use totr_core::kinematics::Skeleton;
use totr_core::motion::MotionSequence;
use totr_core::predictor::{CoefficientCollection, OnlinePredictor, PredictionBatch};
use totr_core::{Error, ErrorKind};

/// Result of every fallible call. Codes 1 to 3 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TotrStatus {
    Ok = 0,
    /// Invalid argument or configuration.
    Usage = 1,
    /// Malformed, inconsistent or unreadable data.
    Data = 2,
    /// Singular system or other numerical failure.
    Numeric = 3,
    /// A required pointer argument was null.
    NullPointer = 4,
    /// An output buffer is too small.
    BufferTooSmall = 5,
    /// No batch has been emitted yet.
    NoBatch = 6,
    /// Internal panic; the handle involved should be freed.
    Panic = 7,
}

/// Fitted coefficient collection.
pub struct TotrCollection(CoefficientCollection);

/// Skeleton with fixed segment lengths.
pub struct TotrSkeleton(Skeleton);

/// Reference cycle produced by `totr prep`.
pub struct TotrReference(ReferenceCycle);

/// Streaming predictor. Owns copies of the collection, reference and
/// skeleton it was created from.
pub struct TotrPredictor {
    online: Option<OnlinePredictor<'static>>,
    owned: (*mut CoefficientCollection, *mut MotionSequence, *mut Skeleton),
    last: Option<PredictionBatch>,
}

impl Drop for TotrPredictor {
    fn drop(&mut self) {
        // The predictor borrows the boxes, so it goes first.
        self.online = None;
        // SAFETY: the pointers come from Box::into_raw in totr_predictor_new
        // and nothing else refers to them once `online` is gone.
        unsafe {
            drop(Box::from_raw(self.owned.0));
            drop(Box::from_raw(self.owned.1));
            drop(Box::from_raw(self.owned.2));
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(e: Error) -> TotrStatus {
    set_error(e.to_string());
    match e.kind() {
        ErrorKind::Usage => TotrStatus::Usage,
        ErrorKind::Data => TotrStatus::Data,
        ErrorKind::Numeric => TotrStatus::Numeric,
    }
}

fn status(message: &str, code: TotrStatus) -> TotrStatus {
    set_error(message);
    code
}

/// Runs `body`, turning panics into [`TotrStatus::Panic`].
fn guard(body: impl FnOnce() -> TotrStatus) -> TotrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            status(&format!("panic: {msg}"), TotrStatus::Panic)
        }
    }
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, TotrStatus> {
    if s.is_null() {
        return Err(status(&format!("{what} is null"), TotrStatus::NullPointer));
    }
    CStr::from_ptr(s).to_str().map_err(|_| status(&format!("{what} is not UTF-8"), TotrStatus::Usage))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return status(concat!(stringify!($p), " is null"), TotrStatus::NullPointer);
        })+
    };
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn emit<T>(out: *mut *mut T, value: T) -> TotrStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    TotrStatus::Ok
}

/// Message of the last failure on the calling thread; empty when none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn totr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn totr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a collection file written by `totr build`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_collection_load(
    path: *const c_char,
    out: *mut *mut TotrCollection,
) -> TotrStatus {
    guard(|| {
        non_null!(out);
        let path = try_status!(text(path, "path"));
        match CoefficientCollection::load(PathBuf::from(path)) {
            Ok(c) => emit(out, TotrCollection(c)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `coll` is a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn totr_collection_save(
    coll: *const TotrCollection,
    path: *const c_char,
) -> TotrStatus {
    guard(|| {
        non_null!(coll);
        let path = try_status!(text(path, "path"));
        match (*coll).0.save(PathBuf::from(path)) {
            Ok(()) => TotrStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of models, window length `L_f` and horizon `K_f` in frames, and
/// the frame rate. Any output pointer may be null.
///
/// # Safety
/// `coll` is a live handle; non-null outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn totr_collection_info(
    coll: *const TotrCollection,
    models: *mut usize,
    past_frames: *mut usize,
    future_frames: *mut usize,
    frame_rate: *mut f64,
) -> TotrStatus {
    guard(|| {
        non_null!(coll);
        let c = &(*coll).0;
        if !models.is_null() {
            *models = c.len();
        }
        if !past_frames.is_null() {
            *past_frames = c.config().past_frames();
        }
        if !future_frames.is_null() {
            *future_frames = c.config().future_frames();
        }
        if !frame_rate.is_null() {
            *frame_rate = c.config().frame_rate;
        }
        TotrStatus::Ok
    })
}

/// # Safety
/// `coll` is null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn totr_collection_free(coll: *mut TotrCollection) {
    if !coll.is_null() {
        drop(Box::from_raw(coll));
    }
}

/// Loads a skeleton TOML file.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_skeleton_load(path: *const c_char, out: *mut *mut TotrSkeleton) -> TotrStatus {
    guard(|| {
        non_null!(out);
        let path = try_status!(text(path, "path"));
        match load_skeleton(path) {
            Ok(s) => emit(out, TotrSkeleton(s)),
            Err(e) => fail(e),
        }
    })
}

/// Parses a skeleton from TOML text.
///
/// # Safety
/// `toml` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_skeleton_parse(toml: *const c_char, out: *mut *mut TotrSkeleton) -> TotrStatus {
    guard(|| {
        non_null!(out);
        let toml = try_status!(text(toml, "toml"));
        match parse_skeleton(toml) {
            Ok(s) => emit(out, TotrSkeleton(s)),
            Err(e) => fail(e),
        }
    })
}

/// Number of joints, root included; stream frames carry three values per
/// joint in skeleton order.
///
/// # Safety
/// `skel` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_skeleton_joint_count(skel: *const TotrSkeleton, out: *mut usize) -> TotrStatus {
    guard(|| {
        non_null!(skel, out);
        *out = (*skel).0.joints().len();
        TotrStatus::Ok
    })
}

/// # Safety
/// `skel` is null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn totr_skeleton_free(skel: *mut TotrSkeleton) {
    if !skel.is_null() {
        drop(Box::from_raw(skel));
    }
}

/// Loads a reference cycle JSON file written by `totr prep`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_reference_load(
    path: *const c_char,
    out: *mut *mut TotrReference,
) -> TotrStatus {
    guard(|| {
        non_null!(out);
        let path = try_status!(text(path, "path"));
        match load_json::<ReferenceCycle>(path) {
            Ok(r) => emit(out, TotrReference(r)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `reference` is null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn totr_reference_free(reference: *mut TotrReference) {
    if !reference.is_null() {
        drop(Box::from_raw(reference));
    }
}

/// Creates a streaming predictor. The inputs are copied, so they may be
/// freed afterwards.
///
/// # Safety
/// The three inputs are live handles and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn totr_predictor_new(
    coll: *const TotrCollection,
    reference: *const TotrReference,
    skel: *const TotrSkeleton,
    out: *mut *mut TotrPredictor,
) -> TotrStatus {
    guard(|| {
        non_null!(coll, reference, skel, out);
        let coll = (*coll).0.clone();
        let extended = match extend_reference(&(*reference).0, coll.config().past_frames()) {
            Ok(e) => e,
            Err(e) => return fail(e),
        };
        let owned = (
            Box::into_raw(Box::new(coll)),
            Box::into_raw(Box::new(extended)),
            Box::into_raw(Box::new((*skel).0.clone())),
        );
        let mut handle = TotrPredictor { online: None, owned, last: None };
        // SAFETY: the boxes live until `handle` drops, which clears
        // `online` before freeing them.
        match OnlinePredictor::new(&*owned.0, &*owned.1, &*owned.2) {
            Ok(p) => {
                handle.online = Some(p);
                emit(out, handle)
            }
            Err(e) => fail(e),
        }
    })
}

/// Feeds one frame of `len = joints * 3` Cartesian coordinates (meters, skeleton
/// joint order) with its stream index. Sets `*emitted` to whether a new
/// batch is available through `totr_predictor_batch_*`.
///
/// # Safety
/// `pred` is a live handle, `points` holds `len` values and `emitted` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn totr_predictor_push(
    pred: *mut TotrPredictor,
    index: u64,
    points: *const f64,
    len: usize,
    emitted: *mut bool,
) -> TotrStatus {
    guard(|| {
        non_null!(pred, points, emitted);
        let p = &mut *pred;
        let online = p.online.as_mut().expect("set at construction");
        match online.push(index, std::slice::from_raw_parts(points, len)) {
            Ok(batch) => {
                *emitted = batch.is_some();
                if batch.is_some() {
                    p.last = batch;
                }
                TotrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Describes the latest batch: the stream index it was made at, its frame
/// count (`K_f`), joints per frame, selected model and the number of
/// predicted angles clamped into `[0, pi]`. Any output pointer may be null.
///
/// # Safety
/// `pred` is a live handle; non-null outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn totr_predictor_batch_info(
    pred: *const TotrPredictor,
    stamp: *mut u64,
    frames: *mut usize,
    joints: *mut usize,
    model_index: *mut usize,
    clamp_count: *mut usize,
) -> TotrStatus {
    guard(|| {
        non_null!(pred);
        let Some(b) = &(*pred).last else {
            return status("no batch emitted yet", TotrStatus::NoBatch);
        };
        if !stamp.is_null() {
            *stamp = b.stamp;
        }
        if !frames.is_null() {
            *frames = b.frames.len();
        }
        if !joints.is_null() {
            *joints = b.frames.first().map_or(0, |f| f.coordinates.len());
        }
        if !model_index.is_null() {
            *model_index = b.selection.model_index;
        }
        if !clamp_count.is_null() {
            *clamp_count = b.clamp_count;
        }
        TotrStatus::Ok
    })
}

/// Copies the latest batch's coordinates, `frames x joints x 3` values in
/// frame-major order, into `out` of capacity `len`.
///
/// # Safety
/// `pred` is a live handle and `out` has room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn totr_predictor_batch_coordinates(
    pred: *const TotrPredictor,
    out: *mut f64,
    len: usize,
) -> TotrStatus {
    guard(|| {
        non_null!(pred, out);
        let Some(b) = &(*pred).last else {
            return status("no batch emitted yet", TotrStatus::NoBatch);
        };
        let values: Vec<f64> =
            b.frames.iter().flat_map(|f| f.coordinates.iter().flatten().copied()).collect();
        if len < values.len() {
            return status(
                &format!("buffer holds {len} values, batch has {}", values.len()),
                TotrStatus::BufferTooSmall,
            );
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
        TotrStatus::Ok
    })
}

/// # Safety
/// `pred` is null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn totr_predictor_free(pred: *mut TotrPredictor) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}
