//! C ABI over `vqlab`.
//!
//! Every function returns a [`VqStatus`]; results go through out-pointers.
//! On failure the thread's last error message is set and can be read with
//! [`vq_last_error`]. Videos and models are opaque handles owned by the
//! caller and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use vqlab::fidelity::{frame_score, video_fidelity, Metric};
use vqlab::harness::experiment::PreprocessOptions;
use vqlab::harness::{krcc, plcc, rmse, srcc};
use vqlab::labeling::law::fit_points;
use vqlab::labeling::{predict_quality, qp_to_qstep, DecayModel, DecayVariant, Encoder};
use vqlab::preprocess::PreprocessConfig;
use vqlab::stnet::{load_checkpoint, predict_video_quality, NetworkParams};
use vqlab::vio::{open_y4m, read_y4m, LumaPlane, VideoSequence};
use vqlab::{content, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    OutOfRange = 5,
    Geometry = 6,
    TooSmall = 7,
    Degenerate = 8,
    Config = 9,
    Internal = 10,
    Panic = 11,
}

/// Values for the `metric` argument of the fidelity functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqMetric {
    Psnr = 0,
    Ssim = 1,
    MsSsim = 2,
}

/// Values for the `variant` argument of the decay-law functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqDecayVariant {
    Exp = 0,
    QStar = 1,
    Ma = 2,
}

/// Geometry of an open video.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VqVideoInfo {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps_num: u32,
    pub fps_den: u32,
}

/// An 8-bit 4:2:0 video held in memory.
pub struct VqVideo(VideoSequence);

/// A trained network and the preprocessing it was trained with.
pub struct VqModel {
    params: NetworkParams,
    preprocess: PreprocessConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::MalformedHeader(_)
            | Error::UnsupportedFormat(_)
            | Error::TruncatedFrame { .. } => VqStatus::Format,
            Error::OutOfRange(_) => VqStatus::OutOfRange,
            Error::GeometryMismatch(_) | Error::ShapeMismatch(_) => VqStatus::Geometry,
            Error::TooSmall(_) => VqStatus::TooSmall,
            Error::Degenerate(_) => VqStatus::Degenerate,
            Error::Config(_) | Error::Json(_) | Error::Toml(_) | Error::Csv(_) => VqStatus::Config,
            Error::Io(_) | Error::MissingAssets(_) => VqStatus::Io,
            Error::NonConvergence(_) | Error::NoForward => VqStatus::Internal,
            _ => VqStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> VqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside vqlab".into());
            VqStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VqStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VqStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn metric_arg(m: c_int) -> Result<Metric, Failure> {
    match m {
        0 => Ok(Metric::Psnr),
        1 => Ok(Metric::Ssim),
        2 => Ok(Metric::MsSsim),
        _ => Err(Failure(
            VqStatus::InvalidArgument,
            format!("unknown metric {m}"),
        )),
    }
}

fn variant_arg(v: c_int) -> Result<DecayVariant, Failure> {
    match v {
        0 => Ok(DecayVariant::Exp),
        1 => Ok(DecayVariant::QStar),
        2 => Ok(DecayVariant::Ma),
        _ => Err(Failure(
            VqStatus::InvalidArgument,
            format!("unknown decay variant {v}"),
        )),
    }
}

/// Non-positive `s_min` means "none".
fn s_min_arg(s_min: f64) -> Option<f64> {
    (s_min > 0.0).then_some(s_min)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn vq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_video_open(path: *const c_char, out: *mut *mut VqVideo) -> VqStatus {
    run(|| {
        let v = open_y4m(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(VqVideo(v))))
    })
}

/// Parses a Y4M stream held in memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_video_from_y4m_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut VqVideo,
) -> VqStatus {
    run(|| {
        let bytes = slice_arg(data, len, "data")?;
        let v = read_y4m(bytes, "memory")?;
        write_out(out, Box::into_raw(Box::new(VqVideo(v))))
    })
}

/// # Safety
/// `video` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn vq_video_free(video: *mut VqVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

/// # Safety
/// `video` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_video_info(video: *const VqVideo, out: *mut VqVideoInfo) -> VqStatus {
    run(|| {
        let v = &deref(video, "video")?.0;
        let fr = v.frame_rate();
        write_out(
            out,
            VqVideoInfo {
                width: v.width(),
                height: v.height(),
                frames: v.frame_count(),
                fps_num: fr.num,
                fps_den: fr.den,
            },
        )
    })
}

/// Mean of per-frame luma scores of `distorted` against `reference`.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_video_fidelity(
    reference: *const VqVideo,
    distorted: *const VqVideo,
    metric: c_int,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let r = &deref(reference, "reference")?.0;
        let d = &deref(distorted, "distorted")?.0;
        let score = video_fidelity(r, d, metric_arg(metric)?)?;
        write_out(out, score.video_score)
    })
}

/// Score of one pair of `width x height` 8-bit planes.
///
/// # Safety
/// `reference` and `distorted` must each hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn vq_plane_fidelity(
    reference: *const u8,
    distorted: *const u8,
    width: usize,
    height: usize,
    metric: c_int,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure(VqStatus::OutOfRange, "plane size overflows".into()))?;
        let a = LumaPlane::new(width, height, slice_arg(reference, n, "reference")?)?;
        let b = LumaPlane::new(width, height, slice_arg(distorted, n, "distorted")?)?;
        write_out(out, frame_score(metric_arg(metric)?, &a, &b)?)
    })
}

/// Spatial and temporal information of a video.
///
/// # Safety
/// `video` must be a live handle; `si` and `ti` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn vq_video_si_ti(
    video: *const VqVideo,
    si: *mut f64,
    ti: *mut f64,
) -> VqStatus {
    run(|| {
        let d = content::describe(&deref(video, "video")?.0)?;
        write_out(si, d.si)?;
        write_out(ti, d.ti)
    })
}

/// Quantization step of a VVC-family Qp.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_qp_to_qstep(qp: f64, out: *mut f64) -> VqStatus {
    run(|| write_out(out, qp_to_qstep(&Encoder::Vvc, qp)?))
}

/// Normalized quality predicted by a decay law. `s_min <= 0` means none,
/// which only the exponential law accepts.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_decay_predict(
    variant: c_int,
    param: f64,
    s_min: f64,
    q_step: f64,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let model = DecayModel::new(variant_arg(variant)?, param, s_min_arg(s_min))?;
        write_out(out, predict_quality(&model, q_step)?)
    })
}

/// Fits the law parameter to `n` `(q_step, mos)` pairs.
///
/// # Safety
/// `q_steps` and `mos` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vq_decay_fit(
    variant: c_int,
    q_steps: *const f64,
    mos: *const f64,
    n: usize,
    s_min: f64,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let q = slice_arg(q_steps, n, "q_steps")?;
        let m = slice_arg(mos, n, "mos")?;
        let points: Vec<(f64, f64)> = q.iter().copied().zip(m.iter().copied()).collect();
        write_out(
            out,
            fit_points(&points, variant_arg(variant)?, s_min_arg(s_min))?,
        )
    })
}

unsafe fn stat(
    f: fn(&[f64], &[f64]) -> vqlab::Result<f64>,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let v = f(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        write_out(out, v)
    })
}

/// # Safety
/// `x` and `y` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vq_plcc(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> VqStatus {
    stat(plcc, x, y, n, out)
}

/// # Safety
/// `x` and `y` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vq_srcc(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> VqStatus {
    stat(srcc, x, y, n, out)
}

/// # Safety
/// `x` and `y` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vq_krcc(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> VqStatus {
    stat(krcc, x, y, n, out)
}

/// # Safety
/// `x` and `y` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vq_rmse(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> VqStatus {
    stat(rmse, x, y, n, out)
}

fn load_model(path: &Path) -> Result<VqModel, Failure> {
    let (params, manifest) = load_checkpoint(path)?;
    let options = PreprocessOptions::from_checkpoint(&manifest)?;
    let preprocess = options.for_model(&params.config);
    Ok(VqModel { params, preprocess })
}

/// Loads a checkpoint manifest (`.json`) and its blob.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_model_load(path: *const c_char, out: *mut *mut VqModel) -> VqStatus {
    run(|| {
        let model = load_model(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(model)))
    })
}

/// Quality in `[0, 1]` of a whole video.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vq_model_predict(
    model: *const VqModel,
    video: *const VqVideo,
    out: *mut f64,
) -> VqStatus {
    run(|| {
        let m = deref(model, "model")?;
        let v = &deref(video, "video")?.0;
        write_out(out, predict_video_quality(v, &m.params, &m.preprocess)?)
    })
}

/// # Safety
/// `model` must come from [`vq_model_load`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vq_model_free(model: *mut VqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
