//! C ABI for loading checkpoints, running the encoder and classifier, and
//! computing ACE vectors.
//!
//! Every function returns a [`CaceStatus`]. On failure the message is kept
//! per thread and can be copied out with [`cace_last_error_message`].
//! Models are opaque handles released with [`cace_model_free`]. Matrices
//! are row-major `double` buffers; every output buffer comes with its
//! capacity in elements, and too small a buffer is an invalid argument.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use contrastive_ace::attribution::{ace_matrix, compute_bounds, AceEstimatorConfig, FeatureBounds};
use contrastive_ace::models::ModelBundle;
use contrastive_ace::numcore::Tensor;
use contrastive_ace::Error;

/// Opaque model handle.
pub struct CaceModel {
    inner: ModelBundle,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    Version = 5,
    Dimension = 6,
    Index = 7,
    Estimator = 8,
    NonFinite = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaceEstimator {
    Analytic = 0,
    MonteCarlo = 1,
    Quadrature = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: CaceStatus,
    message: String,
}

impl Failure {
    fn new(status: CaceStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(CaceStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CaceStatus::Io,
            Error::Malformed(_) | Error::BadMagic { .. } => CaceStatus::Malformed,
            Error::Version { .. } => CaceStatus::Version,
            Error::Dimension(_) => CaceStatus::Dimension,
            Error::Index(_) | Error::UnknownDomain(_) => CaceStatus::Index,
            Error::Estimator(_) => CaceStatus::Estimator,
            Error::NonFinite(_) | Error::Divergence { .. } => CaceStatus::NonFinite,
            _ => CaceStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn run(body: impl FnOnce() -> Result<(), Failure>) -> CaceStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            CaceStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(_) => {
            set_last_error("internal panic");
            CaceStatus::Internal
        }
    }
}

unsafe fn model_ref<'a>(model: *const CaceModel) -> Result<&'a ModelBundle, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| Failure::null("model"))
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(CaceStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    if len == 0 {
        return Err(Failure::new(CaceStatus::InvalidArgument, format!("{what} is empty")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, capacity: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    if capacity < needed {
        return Err(Failure::new(
            CaceStatus::InvalidArgument,
            format!("{what} holds {capacity} elements, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Failure> {
    Ok(Tensor::new(vec![rows, cols], data.to_vec())?)
}

fn store(handle: ModelBundle, out: *mut *mut CaceModel) {
    // SAFETY: callers check `out` for null first
    unsafe { *out = Box::into_raw(Box::new(CaceModel { inner: handle })) };
}

/// Loads a JSON checkpoint into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cace_model_load(path: *const c_char, out: *mut *mut CaceModel) -> CaceStatus {
    run(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let path = c_str(path, "path")?;
        store(ModelBundle::load(Path::new(path))?, out);
        Ok(())
    })
}

/// Parses checkpoint JSON text into a new handle written to `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cace_model_from_json(json: *const c_char, out: *mut *mut CaceModel) -> CaceStatus {
    run(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let text = c_str(json, "json")?;
        store(ModelBundle::from_checkpoint_str(text)?, out);
        Ok(())
    })
}

/// Writes the model as a JSON checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cace_model_save(model: *const CaceModel, path: *const c_char) -> CaceStatus {
    run(|| {
        let m = model_ref(model)?;
        let path = c_str(path, "path")?;
        m.save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cace_model_free(model: *mut CaceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, latent width and class count. Any output may be null.
///
/// # Safety
/// `model` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cace_model_dims(
    model: *const CaceModel,
    input_dim: *mut usize,
    latent_dim: *mut usize,
    classes: *mut usize,
) -> CaceStatus {
    run(|| {
        let m = model_ref(model)?;
        for (ptr, v) in [(input_dim, m.input_dim()), (latent_dim, m.latent_dim()), (classes, m.classes())] {
            if let Some(slot) = ptr.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Latent features `z = f(x)` of `rows` inputs into `out` (`rows × latent`).
///
/// # Safety
/// `x` must hold `rows × input_dim` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn cace_model_encode(
    model: *const CaceModel,
    x: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> CaceStatus {
    run(|| {
        let m = model_ref(model)?;
        let x = matrix(input(x, rows * m.input_dim(), "x")?, rows, m.input_dim())?;
        let z = m.encode_values(&x)?;
        output(out, out_len, z.len(), "out")?.copy_from_slice(z.data());
        Ok(())
    })
}

/// Class logits of `rows` inputs into `out` (`rows × classes`).
///
/// # Safety
/// `x` must hold `rows × input_dim` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn cace_model_logits(
    model: *const CaceModel,
    x: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> CaceStatus {
    run(|| {
        let m = model_ref(model)?;
        let x = matrix(input(x, rows * m.input_dim(), "x")?, rows, m.input_dim())?;
        let logits = m.logits_values(&x)?;
        output(out, out_len, logits.len(), "out")?.copy_from_slice(logits.data());
        Ok(())
    })
}

/// Per-coordinate intervention bounds of a latent batch: min/max over the
/// rows, widened by `epsilon · (range + 1)` on each side.
///
/// # Safety
/// `z` must hold `rows × latent` values; `low` and `high` `latent` values each.
#[no_mangle]
pub unsafe extern "C" fn cace_latent_bounds(
    z: *const f64,
    rows: usize,
    latent: usize,
    epsilon: f64,
    low: *mut f64,
    high: *mut f64,
) -> CaceStatus {
    run(|| {
        let z = matrix(input(z, rows * latent, "z")?, rows, latent)?;
        let b = compute_bounds(&z, epsilon)?;
        output(low, latent, latent, "low")?.copy_from_slice(b.low());
        output(high, latent, latent, "high")?.copy_from_slice(b.high());
        Ok(())
    })
}

/// ACE vectors of `rows` latent vectors into `out` (`rows × latent`); row
/// `i` targets class `targets[i]`. `samples` and `seed` apply to the
/// Monte-Carlo estimator, `samples` is the grid size for quadrature.
///
/// # Safety
/// `z` must hold `rows × latent` values, `targets` `rows` entries, `low`
/// and `high` `latent` values each, and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn cace_ace_vectors(
    model: *const CaceModel,
    z: *const f64,
    rows: usize,
    targets: *const usize,
    low: *const f64,
    high: *const f64,
    estimator: CaceEstimator,
    samples: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CaceStatus {
    run(|| {
        let m = model_ref(model)?;
        let n = m.latent_dim();
        let z = matrix(input(z, rows * n, "z")?, rows, n)?;
        if targets.is_null() {
            return Err(Failure::null("targets"));
        }
        let targets = std::slice::from_raw_parts(targets, rows);
        let bounds = FeatureBounds::new(input(low, n, "low")?.to_vec(), input(high, n, "high")?.to_vec())?;
        let cfg = match estimator {
            CaceEstimator::Analytic => AceEstimatorConfig::analytic(),
            CaceEstimator::MonteCarlo => AceEstimatorConfig::monte_carlo(samples, seed),
            CaceEstimator::Quadrature => AceEstimatorConfig::quadrature(samples),
        };
        let ace = ace_matrix(m, &z, targets, &bounds, &cfg)?;
        output(out, out_len, ace.len(), "out")?.copy_from_slice(ace.data());
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes, and returns the full length including the NUL.
/// Passing a null `buf` only queries the length.
///
/// # Safety
/// A non-null `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cace_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn cace_status_name(status: CaceStatus) -> *const c_char {
    let name: &'static CStr = match status {
        CaceStatus::Ok => c"ok",
        CaceStatus::NullPointer => c"null_pointer",
        CaceStatus::InvalidArgument => c"invalid_argument",
        CaceStatus::Io => c"io",
        CaceStatus::Malformed => c"malformed",
        CaceStatus::Version => c"version",
        CaceStatus::Dimension => c"dimension",
        CaceStatus::Index => c"index",
        CaceStatus::Estimator => c"estimator",
        CaceStatus::NonFinite => c"non_finite",
        CaceStatus::Internal => c"internal",
    };
    name.as_ptr()
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn cace_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
