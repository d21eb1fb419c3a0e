//! C interface to the synthesizer, the assignment solver, the metrics and
//! trained models.
//!
//! Every function returns an [`SfStatus`]. On failure the message is kept
//! per thread and can be read with [`sf_last_error_message`]. Buffers are
//! caller-owned; lengths are element counts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use symflow::assign::{hungarian, CostMatrix};
use symflow::harness::Model;
use symflow::kosc::{render, sample_params, ParamVector, TaskVariant};
use symflow::metrics;
use symflow::nn::Checkpoint;
use symflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfTask {
    Symmetric = 0,
    Asymmetric = 1,
    Gated = 2,
}

impl From<SfTask> for TaskVariant {
    fn from(t: SfTask) -> Self {
        match t {
            SfTask::Symmetric => TaskVariant::Symmetric,
            SfTask::Asymmetric => TaskVariant::Asymmetric,
            SfTask::Gated => TaskVariant::Gated,
        }
    }
}

/// A trained model loaded from a checkpoint.
pub struct SfModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::InvalidArgument(_) => SfStatus::InvalidArgument,
        Error::Shape(_) => SfStatus::Shape,
        Error::NonFinite(_) => SfStatus::NonFinite,
        Error::Divergence { .. } | Error::IntegrationFailure { .. } => SfStatus::Numerical,
        Error::Io(_) => SfStatus::Io,
        Error::Format(_) | Error::Json(_) => SfStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics to a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            SfStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for reading `len` values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for writing `len` values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or valid for writing one value.
unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    *p = v;
    Ok(())
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got != want {
        return Err(Fail::Lib(Error::Shape(format!(
            "{what} has {got} values, expected {want}"
        ))));
    }
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parameter count for `k` oscillators on `task`.
///
/// # Safety
/// `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sf_param_dim(k: usize, task: SfTask, out: *mut usize) -> SfStatus {
    guard(|| write(out, TaskVariant::from(task).param_dim(k), "out"))
}

/// Draws a parameter vector for `seed` into `out` (`out_len` = param dim).
///
/// # Safety
/// `out` must be valid for writing `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sf_sample_params(
    k: usize,
    task: SfTask,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let task = TaskVariant::from(task);
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()).into());
        }
        check_len(out_len, task.param_dim(k), "output")?;
        let x = sample_params(k, task, seed);
        slice_mut(out, out_len, "out")?.copy_from_slice(&x.data);
        Ok(())
    })
}

/// Renders `params` to `n_samples` samples.
///
/// # Safety
/// `params` must be valid for reading `params_len` values and `out` for
/// writing `n_samples` values.
#[no_mangle]
pub unsafe extern "C" fn sf_render(
    params: *const f64,
    params_len: usize,
    k: usize,
    task: SfTask,
    out: *mut f64,
    n_samples: usize,
) -> SfStatus {
    guard(|| {
        let x = ParamVector::new(slice(params, params_len, "params")?.to_vec(), k, task.into())?;
        let y = render(&x, k, task.into(), n_samples)?;
        slice_mut(out, n_samples, "out")?.copy_from_slice(&y.samples);
        Ok(())
    })
}

/// Minimum-cost assignment for a row-major `n × n` matrix. Row `j` is
/// assigned column `perm_out[j]`.
///
/// # Safety
/// `cost` must be valid for reading `n * n` values, `perm_out` for writing
/// `n` values and `cost_out` for writing one value.
#[no_mangle]
pub unsafe extern "C" fn sf_hungarian(
    cost: *const f64,
    n: usize,
    perm_out: *mut usize,
    cost_out: *mut f64,
) -> SfStatus {
    guard(|| {
        let c = slice(cost, n * n, "cost")?;
        let r = hungarian(CostMatrix::new(c, n)?);
        slice_mut(perm_out, n, "perm_out")?.copy_from_slice(&r.permutation);
        write(cost_out, r.cost, "cost_out")
    })
}

/// # Safety
/// `x` and `xh` must be null or valid for reading `len` values; `out` for
/// writing one value.
unsafe fn param_metric(
    x: *const f64,
    xh: *const f64,
    len: usize,
    k: usize,
    out: *mut f64,
    f: impl FnOnce(&[f64], &[f64], usize) -> symflow::Result<f64>,
) -> SfStatus {
    guard(|| {
        let v = f(slice(x, len, "x")?, slice(xh, len, "xh")?, k)?;
        write(out, v, "out")
    })
}

/// # Safety
/// `y` and `yh` must be null or valid for reading `n` values; `out` for
/// writing one value.
unsafe fn audio_metric(
    y: *const f64,
    yh: *const f64,
    n: usize,
    sample_rate: f64,
    out: *mut f64,
    f: impl FnOnce(&[f64], &[f64], f64) -> symflow::Result<f64>,
) -> SfStatus {
    guard(|| {
        let v = f(slice(y, n, "y")?, slice(yh, n, "yh")?, sample_rate)?;
        write(out, v, "out")
    })
}

/// Mean squared error; `k` is ignored.
///
/// # Safety
/// `x` and `xh` must be valid for reading `len` values; `out` for writing
/// one value.
#[no_mangle]
pub unsafe extern "C" fn sf_mse(x: *const f64, xh: *const f64, len: usize, k: usize, out: *mut f64) -> SfStatus {
    param_metric(x, xh, len, k, out, |a, b, _| metrics::mse(a, b))
}

/// Linear assignment cost over oscillator triples.
///
/// # Safety
/// `x` and `xh` must be valid for reading `len` values; `out` for writing
/// one value.
#[no_mangle]
pub unsafe extern "C" fn sf_lac(x: *const f64, xh: *const f64, len: usize, k: usize, out: *mut f64) -> SfStatus {
    param_metric(x, xh, len, k, out, metrics::lac)
}

/// Bidirectional nearest-neighbour distance over oscillator triples.
///
/// # Safety
/// `x` and `xh` must be valid for reading `len` values; `out` for writing
/// one value.
#[no_mangle]
pub unsafe extern "C" fn sf_chamfer(x: *const f64, xh: *const f64, len: usize, k: usize, out: *mut f64) -> SfStatus {
    param_metric(x, xh, len, k, out, metrics::chamfer)
}

/// Log-spectral distance; `sample_rate` is ignored.
///
/// # Safety
/// `y` and `yh` must be valid for reading `n` values; `out` for writing one
/// value.
#[no_mangle]
pub unsafe extern "C" fn sf_lsd(y: *const f64, yh: *const f64, n: usize, sample_rate: f64, out: *mut f64) -> SfStatus {
    audio_metric(y, yh, n, sample_rate, out, |a, b, _| metrics::lsd(a, b))
}

/// Multi-scale log-mel distance.
///
/// # Safety
/// `y` and `yh` must be valid for reading `n` values; `out` for writing one
/// value.
#[no_mangle]
pub unsafe extern "C" fn sf_mss(y: *const f64, yh: *const f64, n: usize, sample_rate: f64, out: *mut f64) -> SfStatus {
    audio_metric(y, yh, n, sample_rate, out, metrics::mss)
}

/// DTW-aligned L1 distance between MFCC sequences.
///
/// # Safety
/// `y` and `yh` must be valid for reading `n` values; `out` for writing one
/// value.
#[no_mangle]
pub unsafe extern "C" fn sf_wmfcc(
    y: *const f64,
    yh: *const f64,
    n: usize,
    sample_rate: f64,
    out: *mut f64,
) -> SfStatus {
    audio_metric(y, yh, n, sample_rate, out, metrics::wmfcc)
}

/// Frame-averaged Wasserstein-1 distance between magnitude spectra.
///
/// # Safety
/// `y` and `yh` must be valid for reading `n` values; `out` for writing one
/// value.
#[no_mangle]
pub unsafe extern "C" fn sf_sot(y: *const f64, yh: *const f64, n: usize, sample_rate: f64, out: *mut f64) -> SfStatus {
    audio_metric(y, yh, n, sample_rate, out, |a, b, sr| {
        metrics::sot(a, b, sr, metrics::SOT_WIN_MS, metrics::SOT_HOP_MS)
    })
}

/// Cosine similarity of RMS envelopes; `sample_rate` is ignored.
///
/// # Safety
/// `y` and `yh` must be valid for reading `n` values; `out` for writing one
/// value.
#[no_mangle]
pub unsafe extern "C" fn sf_rms_cosine(
    y: *const f64,
    yh: *const f64,
    n: usize,
    sample_rate: f64,
    out: *mut f64,
) -> SfStatus {
    audio_metric(y, yh, n, sample_rate, out, |a, b, _| metrics::rms_cosine(a, b))
}

/// Loads a checkpoint. Free the handle with [`sf_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sf_model_load(path: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(p))?;
        let (model, _) = Model::from_checkpoint(&ckpt)?;
        *out = Box::into_raw(Box::new(SfModel { model }));
        Ok(())
    })
}

/// Parameter count produced by the model.
///
/// # Safety
/// `model` must come from [`sf_model_load`]; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sf_model_param_dim(model: *const SfModel, out: *mut usize) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        write(out, m.model.param_dim(), "out")
    })
}

/// Signal length the model expects.
///
/// # Safety
/// `model` must come from [`sf_model_load`]; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sf_model_n_samples(model: *const SfModel, out: *mut usize) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        write(out, m.model.cfg.arch.n_samples, "out")
    })
}

/// Estimates parameters for one signal. `seed` drives the sampler noise of
/// flow models and the draw of the random baseline.
///
/// # Safety
/// `model` must come from [`sf_model_load`], `audio` must be valid for
/// reading `n_samples` values and `out` for writing `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sf_model_infer(
    model: *const SfModel,
    audio: *const f64,
    n_samples: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        check_len(out_len, m.model.param_dim(), "output")?;
        let y = slice(audio, n_samples, "audio")?;
        let est = m.model.infer(&[y], &[seed])?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&est[0]);
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or come from [`sf_model_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(sf_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn null_pointers_are_reported() {
        let s = unsafe { sf_param_dim(2, SfTask::Gated, std::ptr::null_mut()) };
        assert_eq!(s, SfStatus::NullPointer);
        assert!(last_error().contains("out"));
        let mut d = 0;
        assert_eq!(unsafe { sf_param_dim(2, SfTask::Gated, &mut d) }, SfStatus::Ok);
        assert_eq!(d, 7);
        assert_eq!(last_error(), "");
    }

    #[test]
    fn wrong_buffer_length_is_a_shape_error() {
        let mut buf = [0.0; 5];
        let s = unsafe { sf_sample_params(2, SfTask::Symmetric, 1, buf.as_mut_ptr(), buf.len()) };
        assert_eq!(s, SfStatus::Shape);
    }

    #[test]
    fn out_of_range_params_rejected() {
        let x = [2.0, 0.0, 0.0];
        let mut y = [0.0; 16];
        let s = unsafe { sf_render(x.as_ptr(), 3, 1, SfTask::Symmetric, y.as_mut_ptr(), 16) };
        assert_eq!(s, SfStatus::InvalidArgument);
    }

    #[test]
    fn free_accepts_null() {
        unsafe { sf_model_free(std::ptr::null_mut()) };
    }
}
