//! C interface to the kplift pipeline and metrics.
//!
//! Every fallible function returns a [`KpliftStatus`]. On failure the
//! message is stored per thread and can be read with
//! [`kplift_last_error_message`] until the next failing call on the same
//! thread. Objects are opaque handles created by `*_new`/`*_load` functions
//! and released with the matching `*_free`. Paths are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kplift::config::Config;
use kplift::metrics::{mpjpe, pa_mpjpe, MetricsReport};
use kplift::motion::Seq3D;
use kplift::pipeline::{self, EvaluateInputs, LiftStage};
use kplift::Error;

/// Status codes. Values 1-4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpliftStatus {
    Ok = 0,
    Io = 1,
    Schema = 2,
    Numerical = 3,
    UnderConstrained = 4,
    InvalidArgument = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Lift path selection for [`kplift_lift`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpliftStage {
    /// Sampling for cross-view checkpoints, SDS otherwise.
    Auto = 0,
    Sds = 1,
    Sampling = 2,
}

/// Opaque configuration handle.
pub struct KpliftConfig {
    inner: Config,
}

/// Opaque 3D sequence handle (frames x joints x 3, metres).
pub struct KpliftSeq3D {
    inner: Seq3D,
}

/// Opaque metrics report handle.
pub struct KpliftMetrics {
    inner: MetricsReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KpliftStatus {
    match e {
        Error::Io { .. } => KpliftStatus::Io,
        Error::Schema { .. } | Error::Shape(_) => KpliftStatus::Schema,
        Error::InvalidArgument(_) => KpliftStatus::InvalidArgument,
        Error::Numerical(_) => KpliftStatus::Numerical,
        Error::Degenerate(_) | Error::UnderConstrained(_) => KpliftStatus::UnderConstrained,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KpliftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KpliftStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            KpliftStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(format!("invalid argument: {msg}"));
            KpliftStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KpliftStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn opt_path_arg(p: *const c_char, what: &'static str) -> Result<Option<PathBuf>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kplift_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn kplift_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn kplift_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default (desk preset) configuration.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn kplift_config_default(out: *mut *mut KpliftConfig) -> KpliftStatus {
    guard(|| store(out, KpliftConfig { inner: Config::default() }))
}

/// Loads and validates a TOML configuration.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_config_load(path: *const c_char, out: *mut *mut KpliftConfig) -> KpliftStatus {
    guard(|| {
        let cfg = Config::load(&path_arg(path, "path")?)?;
        store(out, KpliftConfig { inner: cfg })
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kplift_config_set_seed(cfg: *mut KpliftConfig, seed: u64) -> KpliftStatus {
    guard(|| {
        cfg.as_mut().ok_or(Fail::Null("cfg"))?.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_config_seed(cfg: *const KpliftConfig, out: *mut u64) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        *out.as_mut().ok_or(Fail::Null("out"))? = c.inner.seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn kplift_config_free(cfg: *mut KpliftConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Writes a synthetic dataset to `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kplift_simulate(cfg: *const KpliftConfig, out_dir: *const c_char) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        pipeline::simulate(&c.inner, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}

/// Trains the single-view denoiser. `resume` may be NULL. The last
/// training loss is written to `final_loss` when it is not NULL.
///
/// # Safety
/// Pointers must be valid or NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn kplift_train_sv(
    cfg: *const KpliftConfig,
    dataset: *const c_char,
    resume: *const c_char,
    out_dir: *const c_char,
    final_loss: *mut f64,
) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let resume = opt_path_arg(resume, "resume")?;
        let r = pipeline::train_sv(&c.inner, &path_arg(dataset, "dataset")?, resume.as_deref(), &path_arg(out_dir, "out_dir")?)?;
        if let Some(l) = final_loss.as_mut() {
            *l = r.losses.last().copied().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Trains the multi-view denoiser, optionally from a checkpoint (`from`
/// may be NULL).
///
/// # Safety
/// Pointers must be valid or NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn kplift_train_mv(
    cfg: *const KpliftConfig,
    dataset: *const c_char,
    from: *const c_char,
    out_dir: *const c_char,
    final_loss: *mut f64,
) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let from = opt_path_arg(from, "from")?;
        let r = pipeline::train_mv(&c.inner, &path_arg(dataset, "dataset")?, from.as_deref(), &path_arg(out_dir, "out_dir")?)?;
        if let Some(l) = final_loss.as_mut() {
            *l = r.losses.last().copied().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Lifts a 2D motion file to a multi-view bundle in `out_dir`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kplift_lift(
    cfg: *const KpliftConfig,
    motion: *const c_char,
    camera: *const c_char,
    checkpoint: *const c_char,
    stage: KpliftStage,
    out_dir: *const c_char,
) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let stage = match stage {
            KpliftStage::Auto => None,
            KpliftStage::Sds => Some(LiftStage::Sds),
            KpliftStage::Sampling => Some(LiftStage::Sampling),
        };
        pipeline::lift(
            &c.inner,
            &path_arg(motion, "motion")?,
            &path_arg(camera, "camera")?,
            &path_arg(checkpoint, "checkpoint")?,
            stage,
            None,
            None,
            &path_arg(out_dir, "out_dir")?,
        )?;
        Ok(())
    })
}

/// Triangulates a bundle into `out_dir`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kplift_reconstruct(
    cfg: *const KpliftConfig,
    bundle: *const c_char,
    out_dir: *const c_char,
) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        pipeline::reconstruct(&c.inner, &path_arg(bundle, "bundle")?, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}

/// Loads a 3D motion file.
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_load(path: *const c_char, out: *mut *mut KpliftSeq3D) -> KpliftStatus {
    guard(|| {
        let (seq, _) = kplift::io::load_motion_3d(&path_arg(path, "path")?)?;
        store(out, KpliftSeq3D { inner: seq })
    })
}

/// Builds a sequence from `frames * joints * 3` row-major coordinates.
///
/// # Safety
/// `xyz` must point to `frames * joints * 3` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_new(
    frames: usize,
    joints: usize,
    xyz: *const f64,
    out: *mut *mut KpliftSeq3D,
) -> KpliftStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(Fail::Null("xyz"));
        }
        let n = frames.checked_mul(joints).ok_or_else(|| Fail::Arg("size overflow".into()))?;
        let flat = std::slice::from_raw_parts(xyz, n * 3);
        let coords = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        store(out, KpliftSeq3D { inner: Seq3D::new(frames, joints, coords)? })
    })
}

/// # Safety
/// `seq` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_frames(seq: *const KpliftSeq3D) -> usize {
    seq.as_ref().map_or(0, |s| s.inner.frames())
}

/// # Safety
/// `seq` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_joints(seq: *const KpliftSeq3D) -> usize {
    seq.as_ref().map_or(0, |s| s.inner.joints())
}

/// Copies the coordinates into `buf`, which must hold `len` doubles with
/// `len == frames * joints * 3`.
///
/// # Safety
/// `seq` live; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_coords(seq: *const KpliftSeq3D, buf: *mut f64, len: usize) -> KpliftStatus {
    guard(|| {
        let s = handle(seq, "seq")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let n = s.inner.coords().len() * 3;
        if len != n {
            return Err(Fail::Arg(format!("buffer holds {len} values, sequence has {n}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for (dst, src) in out.chunks_exact_mut(3).zip(s.inner.coords()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    })
}

/// # Safety
/// `seq` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn kplift_seq3d_free(seq: *mut KpliftSeq3D) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Mean per-joint position error in millimetres.
///
/// # Safety
/// Handles live; `out_mm` writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_mpjpe(pred: *const KpliftSeq3D, gt: *const KpliftSeq3D, out_mm: *mut f64) -> KpliftStatus {
    guard(|| {
        let v = mpjpe(&handle(pred, "pred")?.inner, &handle(gt, "gt")?.inner)?;
        *out_mm.as_mut().ok_or(Fail::Null("out_mm"))? = v;
        Ok(())
    })
}

/// Procrustes-aligned MPJPE in millimetres.
///
/// # Safety
/// Handles live; `out_mm` writable.
#[no_mangle]
pub unsafe extern "C" fn kplift_pa_mpjpe(
    pred: *const KpliftSeq3D,
    gt: *const KpliftSeq3D,
    out_mm: *mut f64,
) -> KpliftStatus {
    guard(|| {
        let v = pa_mpjpe(&handle(pred, "pred")?.inner, &handle(gt, "gt")?.inner)?;
        *out_mm.as_mut().ok_or(Fail::Null("out_mm"))? = v;
        Ok(())
    })
}

/// Scores `count` prediction files against ground-truth files and writes
/// metrics.json / metrics.csv to `out_dir`.
///
/// # Safety
/// `pred` and `gt` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn kplift_evaluate(
    cfg: *const KpliftConfig,
    pred: *const *const c_char,
    gt: *const *const c_char,
    count: usize,
    out_dir: *const c_char,
    out: *mut *mut KpliftMetrics,
) -> KpliftStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        if pred.is_null() || gt.is_null() {
            return Err(Fail::Null("file list"));
        }
        let list = |p: *const *const c_char| -> Result<Vec<PathBuf>, Fail> {
            std::slice::from_raw_parts(p, count).iter().map(|s| path_arg(*s, "file")).collect()
        };
        let inputs = EvaluateInputs {
            pred: list(pred)?,
            gt: list(gt)?,
            ..EvaluateInputs::default()
        };
        let report = pipeline::evaluate(&c.inner, &inputs, &path_arg(out_dir, "out_dir")?)?;
        store(out, KpliftMetrics { inner: report })
    })
}

/// Number of per-sequence rows.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kplift_metrics_rows(m: *const KpliftMetrics) -> usize {
    m.as_ref().map_or(0, |m| m.inner.sequences.len())
}

/// Writes the 8 metric columns (J2D, J2D-C, T_root, MPJPE, PA-MPJPE, FS,
/// T_O_root, O-MPJPE) of row `row`, or of the aggregate when `row` equals
/// the row count. Missing values are NaN.
///
/// # Safety
/// `m` live; `out` valid for 8 writes.
#[no_mangle]
pub unsafe extern "C" fn kplift_metrics_values(m: *const KpliftMetrics, row: usize, out: *mut f64) -> KpliftStatus {
    guard(|| {
        let m = &handle(m, "metrics")?.inner;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let r = if row == m.sequences.len() {
            &m.aggregate
        } else {
            m.sequences.get(row).ok_or_else(|| Fail::Arg(format!("row {row} out of range")))?
        };
        let dst = std::slice::from_raw_parts_mut(out, 8);
        for (d, v) in dst.iter_mut().zip(r.values()) {
            *d = v.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn kplift_metrics_free(m: *mut KpliftMetrics) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
