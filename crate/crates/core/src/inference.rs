//! Whole-image denoisers and quality metrics.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::experts::DiracMixture;
use crate::image::Image;
use crate::model::Model;

/// Step scale of the annealed sampler.
pub const DEFAULT_EPSILON: f64 = 5e-6;
pub const DEFAULT_INNER: usize = 3;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_SIGMA_C: f64 = 0.01;
/// SSIM window side and constants.
pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Anything with a whole-image score `grad_y log f(y, t)`.
pub trait Prior {
    fn image_score(&self, y: &Image, t: f64) -> Result<Image>;
}

impl Prior for Model {
    fn image_score(&self, y: &Image, t: f64) -> Result<Image> {
        self.score(y, t)
    }
}

/// The image is read as one point of the mixture's space, in raster order.
impl Prior for DiracMixture {
    fn image_score(&self, y: &Image, t: f64) -> Result<Image> {
        let (_, s) = self.log_density_score(y.data(), t)?;
        Image::from_vec(y.width(), y.height(), s)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("diffusion time must be nonnegative, got {t}"));
    }
    Ok(())
}

/// `y + 2t grad log f(y, t)`; the patch model averages overlapping patch
/// estimates.
pub fn eb_denoise<P: Prior + ?Sized>(prior: &P, y: &Image, t: f64) -> Result<Image> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(y.clone());
    }
    let s = prior.image_score(y, t)?;
    let mut out = y.clone();
    for (o, g) in out.data_mut().iter_mut().zip(s.data()) {
        *o += 2.0 * t * g;
    }
    Ok(out)
}

/// `sigma_i = s (sigma_C / s)^(i / C)` for `i = 1..=C`, with `s = sqrt(2t)`.
pub fn make_schedule(sqrt2t: f64, sigma_c: f64, count: usize) -> Result<Vec<f64>> {
    if !(sigma_c > 0.0 && sqrt2t > sigma_c && sqrt2t.is_finite()) {
        return invalid(format!(
            "schedule needs sqrt(2t) > sigma_C > 0, got {sqrt2t} and {sigma_c}"
        ));
    }
    if count == 0 {
        return invalid("schedule needs at least one level");
    }
    let ratio = sigma_c / sqrt2t;
    let mut s: Vec<f64> = (1..=count)
        .map(|i| sqrt2t * ratio.powf(i as f64 / count as f64))
        .collect();
    s[count - 1] = sigma_c;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigmas: Vec<f64>,
    pub epsilon: f64,
    pub inner: usize,
}

impl NoiseSchedule {
    pub fn new(sqrt2t: f64, sigma_c: f64, count: usize, epsilon: f64, inner: usize) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return invalid(format!("epsilon must be nonnegative, got {epsilon}"));
        }
        if inner == 0 {
            return invalid("at least one inner iteration is required");
        }
        Ok(Self {
            sigmas: make_schedule(sqrt2t, sigma_c, count)?,
            epsilon,
            inner,
        })
    }

    /// `C = 100`, `B = 3`, `sigma_C = 0.01`, `epsilon = 5e-6`.
    pub fn standard(sqrt2t: f64) -> Result<Self> {
        Self::new(sqrt2t, DEFAULT_SIGMA_C, DEFAULT_STEPS, DEFAULT_EPSILON, DEFAULT_INNER)
    }

    pub fn sigma_c(&self) -> f64 {
        *self.sigmas.last().expect("schedule is non-empty")
    }
}

/// Annealed Langevin sampling of the posterior for `y = x + sigma0 n`.
/// Level `i` runs `B` updates
/// `x <- x + a_i (grad log f(x, sigma_i) + (y - x) / (sigma0^2 - sigma_i^2)) + sqrt(2 a_i) z`
/// with `a_i = epsilon sigma_i^2 / sigma_C^2`, starting from `x = y`.
pub fn stochastic_denoise<P, R>(prior: &P, y: &Image, sigma0: f64, sched: &NoiseSchedule, rng: &mut R) -> Result<Image>
where
    P: Prior + ?Sized,
    R: Rng + ?Sized,
{
    if let Some(&s) = sched.sigmas.iter().find(|&&s| s >= sigma0) {
        return invalid(format!(
            "every schedule level must lie below the corruption level {sigma0}, found {s}"
        ));
    }
    let sc2 = sched.sigma_c().powi(2);
    let mut x = y.clone();
    for (i, &si) in sched.sigmas.iter().enumerate() {
        let alpha = sched.epsilon * si * si / sc2;
        let noise = (2.0 * alpha).sqrt();
        let data_w = 1.0 / (sigma0 * sigma0 - si * si);
        for b in 0..sched.inner {
            let s = prior.image_score(&x, 0.5 * si * si)?;
            for ((xv, &sv), &yv) in x.data_mut().iter_mut().zip(s.data()).zip(y.data()) {
                let z: f64 = StandardNormal.sample(rng);
                *xv += alpha * (sv + (yv - *xv) * data_w) + noise * z;
            }
            if x.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite iterate at level {} of {} (sigma {si:.4e}, inner step {b}, alpha {alpha:.3e})",
                    i + 1,
                    sched.sigmas.len()
                )));
            }
        }
    }
    Ok(x)
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return invalid(format!(
            "images differ in shape: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    Ok(())
}

/// `10 log10(n / |xhat - x|^2)`; `+inf` for identical images.
pub fn psnr(xhat: &Image, x: &Image) -> Result<f64> {
    check_pair(xhat, x)?;
    let err: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (x.len() as f64 / err).log10())
}

/// Summed-area table with a zero first row and column.
fn integral(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += f(r, c);
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

/// Mean SSIM over all fully contained 7x7 windows (uniform weights, unit
/// dynamic range, sample covariances).
pub fn ssim(xhat: &Image, x: &Image) -> Result<f64> {
    check_pair(xhat, x)?;
    let (w, h) = (x.width(), x.height());
    let k = SSIM_WINDOW;
    if w < k || h < k {
        return invalid(format!("SSIM needs images of at least {k}x{k}"));
    }
    let sa = integral(w, h, |r, c| xhat.get(r, c));
    let sb = integral(w, h, |r, c| x.get(r, c));
    let saa = integral(w, h, |r, c| xhat.get(r, c).powi(2));
    let sbb = integral(w, h, |r, c| x.get(r, c).powi(2));
    let sab = integral(w, h, |r, c| xhat.get(r, c) * x.get(r, c));
    let box_sum = |s: &[f64], r: usize, c: usize| {
        let w1 = w + 1;
        s[(r + k) * w1 + c + k] - s[r * w1 + c + k] - s[(r + k) * w1 + c] + s[r * w1 + c]
    };
    let np = (k * k) as f64;
    let cov_norm = np / (np - 1.0);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let ma = box_sum(&sa, r, c) / np;
            let mb = box_sum(&sb, r, c) / np;
            let va = cov_norm * (box_sum(&saa, r, c) / np - ma * ma);
            let vb = cov_norm * (box_sum(&sbb, r, c) / np - mb * mb);
            let cab = cov_norm * (box_sum(&sab, r, c) / np - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    EmpiricalBayes,
    Stochastic,
    Blind,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::EmpiricalBayes => "eb",
            Method::Stochastic => "stochastic",
            Method::Blind => "blind",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eb" => Ok(Method::EmpiricalBayes),
            "stochastic" => Ok(Method::Stochastic),
            "blind" => Ok(Method::Blind),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected eb, stochastic or blind)"
            ))),
        }
    }
}

/// Output image (clamped to `[0, 1]`) with metrics against a reference.
#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub output: Image,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
    pub method: Method,
}

impl DenoiseReport {
    pub const CSV_HEADER: &'static str = "method,psnr_db,ssim,seconds";

    /// Times `run`, clamps its output, and scores it against `clean`.
    pub fn measure(method: Method, clean: &Image, run: impl FnOnce() -> Result<Image>) -> Result<Self> {
        let start = Instant::now();
        let output = run()?.clamp01();
        let seconds = start.elapsed().as_secs_f64();
        Ok(Self {
            psnr: psnr(&output, clean)?,
            ssim: ssim(&output, clean)?,
            output,
            seconds,
            method,
        })
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6},{:.3}", self.method, fmt_db(self.psnr), self.ssim, self.seconds)
    }
}

impl fmt::Display for DenoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: PSNR {} dB, SSIM {:.4}, {:.2} s",
            self.method,
            fmt_db(self.psnr),
            self.ssim,
            self.seconds
        )
    }
}

/// PSNR text with `inf` for exact matches.
pub fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}
