//! C interface. Models are opaque handles loaded from archives; images are
//! row-major `double` buffers of `width * height` values in `[0, 1]`.
//!
//! Every function returns a [`PogmdmStatus`]. On failure the message is kept
//! per thread and can be read with [`pogmdm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pogmdm::archive::ModelArchive;
use pogmdm::inference::{self, NoiseSchedule};
use pogmdm::patch::{blind_denoise, default_noise_grid};
use pogmdm::{Error, Image, Model, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PogmdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Archive = 5,
    Image = 6,
    Numerical = 7,
    Degenerate = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PogmdmKind {
    Patch = 0,
    Wavelet = 1,
    Shearlet = 2,
}

/// Opaque model handle.
pub struct PogmdmModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PogmdmStatus {
    match e {
        Error::InvalidArgument(_) => PogmdmStatus::InvalidArgument,
        Error::Config(_) => PogmdmStatus::Config,
        Error::Io(_) => PogmdmStatus::Io,
        Error::Archive(_) => PogmdmStatus::Archive,
        Error::Image(_) => PogmdmStatus::Image,
        Error::Numerical(_) => PogmdmStatus::Numerical,
        Error::Degenerate(_) => PogmdmStatus::Degenerate,
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

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> PogmdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PogmdmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            PogmdmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PogmdmStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const PogmdmModel) -> Result<&'a Model, Fail> {
    m.as_ref().map(|h| &h.model).ok_or(Fail::Null("model"))
}

unsafe fn read_image(data: *const f64, width: usize, height: usize) -> Result<Image, Fail> {
    if data.is_null() {
        return Err(Fail::Null("image"));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::InvalidArgument("image size overflows".into()))?;
    Ok(Image::from_vec(width, height, std::slice::from_raw_parts(data, n).to_vec())?)
}

unsafe fn write_image(img: &Image, out: *mut f64) -> FfiResult {
    if out.is_null() {
        return Err(Fail::Null("output"));
    }
    std::slice::from_raw_parts_mut(out, img.len()).copy_from_slice(img.data());
    Ok(())
}

unsafe fn write_scalar<T>(v: T, out: *mut T) -> FfiResult {
    if out.is_null() {
        return Err(Fail::Null("output"));
    }
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pogmdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads and validates an archive. Free the handle with
/// [`pogmdm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_model_load(path: *const c_char, out: *mut *mut PogmdmModel) -> PogmdmStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("output"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let model = ModelArchive::load(p)?.model;
        *out = Box::into_raw(Box::new(PogmdmModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pogmdm_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_model_free(model: *mut PogmdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_model_kind(model: *const PogmdmModel, out: *mut PogmdmKind) -> PogmdmStatus {
    guard(|| {
        let k = match model_ref(model)?.kind() {
            ModelKind::Patch => PogmdmKind::Patch,
            ModelKind::Wavelet => PogmdmKind::Wavelet,
            ModelKind::Shearlet => PogmdmKind::Shearlet,
        };
        write_scalar(k, out)
    })
}

/// Number of learnable parameters.
///
/// # Safety
/// `model` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_model_n_params(model: *const PogmdmModel, out: *mut usize) -> PogmdmStatus {
    guard(|| write_scalar(model_ref(model)?.n_params(), out))
}

/// Whole-image score at diffusion time `t`.
///
/// # Safety
/// `y` and `out` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_score(
    model: *const PogmdmModel,
    y: *const f64,
    width: usize,
    height: usize,
    t: f64,
    out: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let img = read_image(y, width, height)?;
        write_image(&m.score(&img, t)?, out)
    })
}

/// One-step empirical Bayes denoising for noise level `sigma`. The output
/// is not clamped.
///
/// # Safety
/// `y` and `out` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_denoise_eb(
    model: *const PogmdmModel,
    y: *const f64,
    width: usize,
    height: usize,
    sigma: f64,
    out: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let img = read_image(y, width, height)?;
        write_image(&inference::eb_denoise(m, &img, 0.5 * sigma * sigma)?, out)
    })
}

/// Annealed stochastic denoising with the default schedule.
///
/// # Safety
/// `y` and `out` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_denoise_stochastic(
    model: *const PogmdmModel,
    y: *const f64,
    width: usize,
    height: usize,
    sigma: f64,
    seed: u64,
    out: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let img = read_image(y, width, height)?;
        let sched = NoiseSchedule::standard(sigma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        write_image(&inference::stochastic_denoise(m, &img, sigma, &sched, &mut rng)?, out)
    })
}

/// Blind denoising with per-patch noise estimates (patch models only).
/// `sigma_map` receives the pixel-averaged estimated `sqrt(2t)`; it may be
/// null.
///
/// # Safety
/// `y`, `out` and a non-null `sigma_map` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_denoise_blind(
    model: *const PogmdmModel,
    y: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
    sigma_map: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let Model::Patch(m) = model_ref(model)? else {
            return Err(Error::InvalidArgument("blind denoising needs a patch model".into()).into());
        };
        let img = read_image(y, width, height)?;
        let r = blind_denoise(m, &img, &default_noise_grid())?;
        write_image(&r.denoised, out)?;
        if !sigma_map.is_null() {
            write_image(&r.sigma_map, sigma_map)?;
        }
        Ok(())
    })
}

/// PSNR in dB; `+inf` for identical images.
///
/// # Safety
/// `a` and `b` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_psnr(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let (x, y) = (read_image(a, width, height)?, read_image(b, width, height)?);
        write_scalar(inference::psnr(&x, &y)?, out)
    })
}

/// Mean SSIM over 7x7 windows.
///
/// # Safety
/// `a` and `b` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn pogmdm_ssim(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
) -> PogmdmStatus {
    guard(|| {
        let (x, y) = (read_image(a, width, height)?, read_image(b, width, height)?);
        write_scalar(inference::ssim(&x, &y)?, out)
    })
}
