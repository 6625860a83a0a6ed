//! C ABI over the pointnorm core.
//!
//! Every entry point returns a [`PnStatus`]. On failure the message is kept
//! per thread and can be read with [`pn_last_error`]. Models are opaque
//! [`PnModel`] handles released with [`pn_model_free`]. Panics are caught at
//! the boundary and reported as `PN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use pointnorm::data::prepare;
use pointnorm::geometry::{farthest_point_sample, knn_group, Point, SeedRule};
use pointnorm::network::{load_checkpoint, save_checkpoint, stored_dtype, ModelConfig, PointNormNet};
use pointnorm::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Checkpoint = 5,
    DigestMismatch = 6,
    Io = 7,
    Numeric = 8,
    Dimension = 9,
    Index = 10,
    Contract = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Built-in model sizes for `pn_model_new`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnPreset {
    Tiny = 0,
    Full = 1,
}

enum Net {
    F32(PointNormNet<f32>),
    F64(PointNormNet<f64>),
}

/// Opaque classifier handle.
pub struct PnModel {
    net: Net,
}

impl PnModel {
    fn config(&self) -> &ModelConfig {
        match &self.net {
            Net::F32(n) => n.config(),
            Net::F64(n) => n.config(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::Argument(_) => PnStatus::InvalidArgument,
        Error::Config(_) => PnStatus::Config,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => PnStatus::Parse,
        Error::Checkpoint(_) => PnStatus::Checkpoint,
        Error::DigestMismatch { .. } => PnStatus::DigestMismatch,
        Error::Io(_) => PnStatus::Io,
        Error::Numeric(_) => PnStatus::Numeric,
        Error::Dimension { .. } => PnStatus::Dimension,
        Error::Index { .. } => PnStatus::Index,
        Error::Contract(_) => PnStatus::Contract,
    }
}

struct Fail(PnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: PnStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PnStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(PnStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PnStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn points_arg(coords: *const f64, n: usize) -> Result<Vec<Point>, Fail> {
    non_null(coords, "coords")?;
    let flat = slice::from_raw_parts(coords, n * 3);
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Freshly initialized f32 model.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pn_model_new(
    preset: PnPreset,
    num_classes: usize,
    input_points: usize,
    seed: u64,
    out: *mut *mut PnModel,
) -> PnStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = match preset {
            PnPreset::Tiny => ModelConfig::tiny(num_classes, input_points),
            PnPreset::Full => ModelConfig::full(num_classes, input_points),
        };
        let net = PointNormNet::<f32>::new(config, seed)?;
        *out = Box::into_raw(Box::new(PnModel { net: Net::F32(net) }));
        Ok(())
    })
}

/// Loads a checkpoint in the precision it was stored with.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pn_model_load(path: *const c_char, out: *mut *mut PnModel) -> PnStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let dtype = stored_dtype(BufReader::new(File::open(path).map_err(Error::from)?))?;
        let net = match dtype {
            Some(1) => Net::F64(load_checkpoint(path, None)?),
            _ => Net::F32(load_checkpoint(path, None)?),
        };
        *out = Box::into_raw(Box::new(PnModel { net }));
        Ok(())
    })
}

/// Writes the model to `path`.
///
/// # Safety
/// `model` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pn_model_save(model: *const PnModel, path: *const c_char) -> PnStatus {
    guard(|| {
        non_null(model, "model")?;
        let path = path_arg(path)?;
        match &(*model).net {
            Net::F32(n) => save_checkpoint(n, path)?,
            Net::F64(n) => save_checkpoint(n, path)?,
        }
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_model_free(model: *mut PnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_model_num_classes(model: *const PnModel, out: *mut usize) -> PnStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).config().num_classes;
        Ok(())
    })
}

/// Points per cloud the model consumes.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_model_input_points(model: *const PnModel, out: *mut usize) -> PnStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).config().input_points;
        Ok(())
    })
}

/// Class logits for `batch` clouds of `points` xyz triples each, laid out
/// cloud after cloud. Clouds are resampled to the model's input size and
/// scaled into the unit sphere like training data. `logits` receives
/// `batch * num_classes` values, row per cloud.
///
/// # Safety
/// `coords` must hold `batch * points * 3` doubles and `logits` must have
/// room for `logits_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pn_model_predict(
    model: *const PnModel,
    coords: *const f64,
    batch: usize,
    points: usize,
    logits: *mut f64,
    logits_len: usize,
) -> PnStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(logits, "logits")?;
        if batch == 0 || points == 0 {
            return Err(fail(PnStatus::InvalidArgument, "batch and points must be positive"));
        }
        let model = &*model;
        let config = model.config();
        let need = batch * config.num_classes;
        if logits_len < need {
            return Err(fail(
                PnStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len} values, {need} needed"),
            ));
        }
        let all = points_arg(coords, batch * points)?;
        let clouds = all
            .chunks_exact(points)
            .enumerate()
            .map(|(i, c)| prepare(c.to_vec(), 0, config.input_points, i as u64).map(|s| s.coords))
            .collect::<pointnorm::Result<Vec<_>>>()?;
        let values = match &model.net {
            Net::F32(n) => n.predict(&clouds)?.to_f64(),
            Net::F64(n) => n.predict(&clouds)?.to_f64(),
        };
        slice::from_raw_parts_mut(logits, need).copy_from_slice(&values);
        Ok(())
    })
}

/// Farthest point sampling of `m` indices out of `n` xyz points, seeded at
/// the point farthest from the centroid.
///
/// # Safety
/// `coords` must hold `n * 3` doubles and `out` room for `m` indices.
#[no_mangle]
pub unsafe extern "C" fn pn_farthest_point_sample(coords: *const f64, n: usize, m: usize, out: *mut usize) -> PnStatus {
    guard(|| {
        non_null(out, "out")?;
        let pts = points_arg(coords, n)?;
        let idx = farthest_point_sample(&pts, m, SeedRule::FarthestFromCentroid)?;
        slice::from_raw_parts_mut(out, m).copy_from_slice(&idx);
        Ok(())
    })
}

/// `k` nearest neighbors of each of the `m` sample indices, nearest first
/// with ties broken by lower index. `out` receives `m * k` indices.
///
/// # Safety
/// `coords` must hold `n * 3` doubles, `samples` `m` indices, and `out`
/// room for `m * k` indices.
#[no_mangle]
pub unsafe extern "C" fn pn_knn_group(
    coords: *const f64,
    n: usize,
    samples: *const usize,
    m: usize,
    k: usize,
    out: *mut usize,
) -> PnStatus {
    guard(|| {
        non_null(samples, "samples")?;
        non_null(out, "out")?;
        let pts = points_arg(coords, n)?;
        let s = slice::from_raw_parts(samples, m);
        let idx = knn_group(&pts, s, k)?;
        slice::from_raw_parts_mut(out, m * k).copy_from_slice(&idx);
        Ok(())
    })
}
