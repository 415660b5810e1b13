//! Convolutional model over an FFT-domain shearlet system.
//!
//! Band `b` maps an `n x n` image to `c_b = lambda_b * IFFT(conj(g_b) FFT(x))`
//! with `g_b` the band spectrum. Each band has one expert with diffusion
//! rate `xi_b^2`, `xi_b = lambda_b * max |g_b|`. Bands are ordered by scale
//! (coarse first), then cone (horizontal, vertical), then shear `-2..=2`.

pub mod tables;
mod build;

use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::experts::{Expert, GmmExpert, Prepared};
use crate::fft::Fft2;
use crate::image::Image;
use crate::mathkit::project_simplex;
use crate::model::DsmSample;

use build::{
    conv1, conv1_adj, mirror_filter, row_filter_spectrum, row_filter_spectrum_adj, upsample1,
    upsample1_adj, wedges, wedges_backward, WedgeInputs, WedgeTrace, SHEARS,
};

pub const H1_TAPS: usize = 9;
pub const P_SIDE: usize = 17;
/// Mean-grid half-width of every band expert.
pub const SHEARLET_ETA: f64 = 0.5;
/// Support threshold of [`ShearletSystem::flatness_report`], relative to the peak.
pub const FLATNESS_SUPPORT: f64 = 1e-3;
const PARAM_TOLERANCE: f64 = 1e-10;
/// Work is split into this many chunks regardless of the thread count so
/// that floating-point sums do not depend on it.
const CHUNKS: usize = 16;

pub fn n_bands(scales: usize) -> usize {
    2 * scales * SHEARS.len()
}

/// Learnable transform parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearletParams {
    pub h1: Vec<f64>,
    /// `17 x 17`, row-major.
    pub p: Vec<f64>,
    pub scales: usize,
    pub lambdas: Vec<f64>,
}

impl ShearletParams {
    /// Shipped filters, unit band weights.
    pub fn default_for(scales: usize) -> Self {
        Self {
            h1: tables::DEFAULT_H1.to_vec(),
            p: tables::DEFAULT_P.to_vec(),
            scales,
            lambdas: vec![1.0; n_bands(scales)],
        }
    }

    pub fn n_bands(&self) -> usize {
        n_bands(self.scales)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return invalid("at least one shearlet scale is required");
        }
        if self.h1.len() != H1_TAPS || self.p.len() != P_SIDE * P_SIDE {
            return invalid(format!("h1 needs {H1_TAPS} taps and P {P_SIDE}x{P_SIDE} entries"));
        }
        if self.lambdas.len() != self.n_bands() {
            return invalid(format!("{} band weights expected", self.n_bands()));
        }
        let all = self.h1.iter().chain(&self.p).chain(&self.lambdas);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite shearlet parameter".into()));
        }
        let s: f64 = self.h1.iter().sum();
        if (s - 1.0).abs() > PARAM_TOLERANCE {
            return Err(Error::Degenerate(format!("h1 sums to {s}, not 1")));
        }
        let l1: f64 = self.p.iter().map(|v| v.abs()).sum();
        if (l1 - 1.0).abs() > PARAM_TOLERANCE {
            return Err(Error::Degenerate(format!("P has l1 norm {l1}, not 1")));
        }
        if self.lambdas.iter().any(|&l| l < 0.0) {
            return Err(Error::Degenerate("negative band weight".into()));
        }
        Ok(())
    }
}

/// `h1` onto `{sum = 1}`, `P` onto the unit l1 sphere (signs kept), band
/// weights onto `[0, inf)`.
pub fn project_shearlet_params(p: &ShearletParams) -> Result<ShearletParams> {
    let off = (p.h1.iter().sum::<f64>() - 1.0) / p.h1.len() as f64;
    let h1 = p.h1.iter().map(|v| v - off).collect();
    let mag: Vec<f64> = p.p.iter().map(|v| v.abs()).collect();
    if mag.iter().all(|&v| v == 0.0) {
        return invalid("the zero fan filter has no l1 projection");
    }
    let proj = project_simplex(&mag)?;
    let pp = p
        .p
        .iter()
        .zip(proj)
        .map(|(&s, m)| if s < 0.0 { -m } else { m })
        .collect();
    Ok(ShearletParams {
        h1,
        p: pp,
        scales: p.scales,
        lambdas: p.lambdas.iter().map(|l| l.max(0.0)).collect(),
    })
}

/// Filters derived from `h1`: the wedge low-passes and one high-pass per scale.
struct Derived {
    low2: Vec<f64>,
    lpf: Vec<f64>,
    highs: Vec<Vec<f64>>,
}

fn derived(h1: &[f64], scales: usize) -> Derived {
    let mut highs = vec![mirror_filter(h1)];
    for _ in 1..scales {
        let next = conv1(h1, &upsample1(&highs[0]));
        highs.insert(0, next);
    }
    Derived {
        low2: conv1(h1, &upsample1(h1)),
        lpf: h1.iter().rev().copied().collect(),
        highs,
    }
}

fn band_index(scale: usize, cone: usize, shear: usize) -> usize {
    (scale * 2 + cone) * SHEARS.len() + shear
}

fn transpose(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = a[r * n + c];
        }
    }
    out
}

/// State kept from construction for gradients.
#[derive(Debug, Clone)]
struct Construction {
    params: ShearletParams,
    wedges: Vec<Vec<Complex64>>,
    trace: WedgeTrace,
    bandpass: Vec<Vec<Complex64>>,
}

/// Band spectra at one resolution with their experts.
#[derive(Debug, Clone)]
pub struct ShearletSystem {
    n: usize,
    spectra: Vec<Vec<Complex64>>,
    lambdas: Vec<f64>,
    peaks: Vec<f64>,
    peak_at: Vec<usize>,
    experts: Vec<Expert>,
    fft: Fft2,
    construction: Option<Construction>,
}

fn check_side(n: usize) -> Result<()> {
    if n < 8 || !n.is_multiple_of(2) {
        return invalid(format!(
            "shearlet systems need an even image side of at least 8, got {n}"
        ));
    }
    Ok(())
}

impl ShearletSystem {
    /// Builds the band spectra at `n x n` and attaches one expert per band.
    pub fn build(params: &ShearletParams, n: usize, experts: Vec<Expert>) -> Result<Self> {
        params.validate()?;
        Self::build_unchecked(params, n, experts)
    }

    /// [`ShearletSystem::build`] without the parameter constraints.
    fn build_unchecked(params: &ShearletParams, n: usize, experts: Vec<Expert>) -> Result<Self> {
        check_side(n)?;
        let fft = Fft2::new(n, n);
        let d = derived(&params.h1, params.scales);
        let inputs = WedgeInputs {
            p: &params.p,
            p_side: P_SIDE,
            low2: &d.low2,
            lp: &params.h1,
            lpf: &d.lpf,
        };
        let (wedge, trace) = wedges(&fft, n, &inputs);
        let bandpass: Vec<Vec<Complex64>> =
            d.highs.iter().map(|f| row_filter_spectrum(f, n)).collect();
        let mut spectra = vec![Vec::new(); params.n_bands()];
        for (j, bp) in bandpass.iter().enumerate() {
            for (k, w) in wedge.iter().enumerate() {
                let g: Vec<Complex64> = w.iter().zip(bp).map(|(a, b)| a * b.conj()).collect();
                spectra[band_index(j, 1, k)] = transpose(&g, n);
                spectra[band_index(j, 0, k)] = g;
            }
        }
        let mut s = Self::from_spectra(n, spectra, params.lambdas.clone(), experts)?;
        s.construction = Some(Construction {
            params: params.clone(),
            wedges: wedge,
            trace,
            bandpass,
        });
        Ok(s)
    }

    /// System from explicit spectra (row-major `n x n`, DC at index 0).
    pub fn from_spectra(
        n: usize,
        spectra: Vec<Vec<Complex64>>,
        lambdas: Vec<f64>,
        mut experts: Vec<Expert>,
    ) -> Result<Self> {
        if n == 0 {
            return invalid("empty resolution");
        }
        if spectra.is_empty() || spectra.len() != lambdas.len() || spectra.len() != experts.len() {
            return invalid("one weight and one expert per band expected");
        }
        if spectra.iter().any(|s| s.len() != n * n) {
            return invalid(format!("band spectra must have {n}x{n} entries"));
        }
        let mut peaks = Vec::with_capacity(spectra.len());
        let mut peak_at = Vec::with_capacity(spectra.len());
        for (b, s) in spectra.iter().enumerate() {
            let mut best = (0usize, 0.0f64);
            for (i, z) in s.iter().enumerate() {
                let m = z.norm();
                if !m.is_finite() {
                    return Err(Error::Numerical(format!("band {b} spectrum is not finite")));
                }
                if m > best.1 {
                    best = (i, m);
                }
            }
            if best.1 <= 0.0 {
                return Err(Error::Degenerate(format!("band {b} has an all-zero spectrum")));
            }
            peak_at.push(best.0);
            peaks.push(best.1);
        }
        for ((e, l), p) in experts.iter_mut().zip(&lambdas).zip(&peaks) {
            e.set_rate((l * p).powi(2));
        }
        Ok(Self {
            n,
            spectra,
            lambdas,
            peaks,
            peak_at,
            experts,
            fft: Fft2::new(n, n),
            construction: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_bands(&self) -> usize {
        self.spectra.len()
    }

    pub fn spectra(&self) -> &[Vec<Complex64>] {
        &self.spectra
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `lambda_b * max |g_b|`.
    pub fn xis(&self) -> Vec<f64> {
        self.lambdas.iter().zip(&self.peaks).map(|(l, p)| l * p).collect()
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        if !x.is_square() {
            return invalid(format!(
                "the shearlet model only processes square images, got {}x{}",
                x.width(),
                x.height()
            ));
        }
        if x.width() != self.n {
            return invalid(format!(
                "image side {} differs from the system resolution {}",
                x.width(),
                self.n
            ));
        }
        Ok(())
    }

    fn band_coeffs(&self, xf: &[Complex64], b: usize, weight: f64) -> Vec<f64> {
        let mut buf: Vec<Complex64> =
            self.spectra[b].iter().zip(xf).map(|(g, x)| g.conj() * x).collect();
        self.fft.inverse(&mut buf);
        buf.iter().map(|z| weight * z.re).collect()
    }

    /// `lambda_b * g_b * FFT(c)`, the band's contribution to the adjoint in
    /// the Fourier domain.
    fn band_adjoint_hat(&self, c: &[f64], b: usize) -> Vec<Complex64> {
        let cf = self.fft.forward_real(c);
        let l = self.lambdas[b];
        self.spectra[b].iter().zip(cf).map(|(g, z)| l * g * z).collect()
    }

    fn sum_hats(&self, hats: Vec<Vec<Complex64>>) -> Image {
        let mut acc = vec![Complex64::default(); self.n * self.n];
        for h in hats {
            for (a, v) in acc.iter_mut().zip(h) {
                *a += v;
            }
        }
        self.fft.inverse(&mut acc);
        Image::from_vec(self.n, self.n, acc.iter().map(|z| z.re).collect())
            .expect("square buffer")
    }

    /// Per-band coefficient arrays.
    pub fn analysis(&self, x: &Image) -> Result<Vec<Vec<f64>>> {
        self.check_image(x)?;
        let xf = self.fft.forward_real(x.data());
        Ok((0..self.n_bands())
            .into_par_iter()
            .map(|b| self.band_coeffs(&xf, b, self.lambdas[b]))
            .collect())
    }

    /// Exact adjoint of [`ShearletSystem::analysis`].
    pub fn adjoint(&self, coeffs: &[Vec<f64>]) -> Result<Image> {
        if coeffs.len() != self.n_bands() || coeffs.iter().any(|c| c.len() != self.n * self.n) {
            return invalid("coefficient shape mismatch");
        }
        let hats = (0..self.n_bands())
            .into_par_iter()
            .map(|b| self.band_adjoint_hat(&coeffs[b], b))
            .collect();
        Ok(self.sum_hats(hats))
    }

    pub fn prepare(&self, t: f64) -> Result<Vec<Prepared>> {
        if !(t >= 0.0 && t.is_finite()) {
            return invalid(format!("diffusion time must be nonnegative, got {t}"));
        }
        Ok(self.experts.iter().map(|e| e.prepare(t)).collect())
    }

    /// Sum over bands and pixels of `log psi_b(c, t)`.
    pub fn log_density(&self, x: &Image, t: f64) -> Result<f64> {
        let prep = self.prepare(t)?;
        let c = self.analysis(x)?;
        Ok(c
            .iter()
            .zip(&prep)
            .map(|(band, p)| band.iter().map(|&v| p.log_density(v)).sum::<f64>())
            .sum())
    }

    pub fn score(&self, x: &Image, t: f64) -> Result<Image> {
        let prep = self.prepare(t)?;
        self.check_image(x)?;
        let xf = self.fft.forward_real(x.data());
        let hats = (0..self.n_bands())
            .into_par_iter()
            .map(|b| {
                let phi: Vec<f64> = self
                    .band_coeffs(&xf, b, self.lambdas[b])
                    .iter()
                    .map(|&v| prep[b].score(v))
                    .collect();
                self.band_adjoint_hat(&phi, b)
            })
            .collect();
        Ok(self.sum_hats(hats))
    }

    /// Pairwise cosine similarities of the spectrum magnitudes.
    pub fn overlap_matrix(&self) -> DMatrix<f64> {
        let mags: Vec<Vec<f64>> = self
            .spectra
            .iter()
            .map(|s| {
                let m: Vec<f64> = s.iter().map(|z| z.norm()).collect();
                let nrm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                m.iter().map(|v| v / nrm).collect()
            })
            .collect();
        let nb = mags.len();
        let mut out = DMatrix::zeros(nb, nb);
        for a in 0..nb {
            out[(a, a)] = 1.0;
            for b in 0..a {
                let v: f64 = mags[a].iter().zip(&mags[b]).map(|(x, y)| x * y).sum();
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        out
    }

    /// Per band, `min |g| / max |g|` over `{|g| > 1e-3 max |g|}`.
    pub fn flatness_report(&self) -> Result<Vec<f64>> {
        self.spectra
            .iter()
            .enumerate()
            .map(|(b, s)| flatness(s).ok_or_else(|| {
                Error::Degenerate(format!("band {b} has empty spectral support"))
            }))
            .collect()
    }
}

fn flatness(s: &[Complex64]) -> Option<f64> {
    let peak = s.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    let floor = s
        .iter()
        .map(|z| z.norm())
        .filter(|&m| m > FLATNESS_SUPPORT * peak)
        .fold(f64::INFINITY, f64::min);
    Some(floor / peak)
}

/// Mean off-diagonal entry of a symmetric overlap matrix.
pub fn mean_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| m[(a, b)])
        .sum();
    total / (n * (n - 1)) as f64
}

/// Convolutional model: transform parameters plus one expert per band.
/// Systems are built lazily per resolution and dropped on parameter change.
pub struct ShearletModel {
    params: ShearletParams,
    experts: Vec<Expert>,
    cache: Mutex<Option<Arc<ShearletSystem>>>,
}

impl std::fmt::Debug for ShearletModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShearletModel")
            .field("params", &self.params)
            .field("experts", &self.experts)
            .finish()
    }
}

impl Clone for ShearletModel {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            experts: self.experts.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl PartialEq for ShearletModel {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params && self.experts == o.experts
    }
}

/// Per-chunk accumulators of the batch gradient.
struct Acc {
    loss: f64,
    bands: Vec<Vec<Complex64>>,
    lambdas: Vec<f64>,
    experts: Vec<f64>,
}

impl Acc {
    fn zeros(nb: usize, npix: usize, ne: usize) -> Self {
        Self {
            loss: 0.0,
            bands: vec![vec![Complex64::default(); npix]; nb],
            lambdas: vec![0.0; nb],
            experts: vec![0.0; ne],
        }
    }

    fn add(&mut self, o: Acc) {
        self.loss += o.loss;
        for (a, b) in self.bands.iter_mut().zip(o.bands) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.lambdas.iter_mut().zip(o.lambdas) {
            *a += b;
        }
        for (a, b) in self.experts.iter_mut().zip(o.experts) {
            *a += b;
        }
    }
}

impl ShearletModel {
    pub fn new(params: ShearletParams, experts: Vec<Expert>) -> Result<Self> {
        params.validate()?;
        if experts.len() != params.n_bands() {
            return invalid(format!("{} band experts expected", params.n_bands()));
        }
        Ok(Self {
            params,
            experts,
            cache: Mutex::new(None),
        })
    }

    /// Shipped filters, unit weights, uniform GMM experts on `[-0.5, 0.5]`.
    pub fn init(scales: usize, components: usize) -> Result<Self> {
        let experts = (0..n_bands(scales))
            .map(|_| GmmExpert::new(components, SHEARLET_ETA, 1.0).map(Expert::Gmm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ShearletParams::default_for(scales), experts)
    }

    pub fn params(&self) -> &ShearletParams {
        &self.params
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn n_bands(&self) -> usize {
        self.params.n_bands()
    }

    /// Cached system at resolution `n`.
    pub fn system(&self, n: usize) -> Result<Arc<ShearletSystem>> {
        let mut guard = self.cache.lock().expect("cache lock");
        if let Some(s) = guard.as_ref() {
            if s.n == n {
                return Ok(s.clone());
            }
        }
        let s = Arc::new(ShearletSystem::build(&self.params, n, self.experts.clone())?);
        *guard = Some(s.clone());
        Ok(s)
    }

    fn system_for(&self, x: &Image) -> Result<Arc<ShearletSystem>> {
        if !x.is_square() {
            return invalid(format!(
                "the shearlet model only processes square images, got {}x{}",
                x.width(),
                x.height()
            ));
        }
        self.system(x.width())
    }

    pub fn log_density(&self, x: &Image, t: f64) -> Result<f64> {
        self.system_for(x)?.log_density(x, t)
    }

    pub fn score(&self, x: &Image, t: f64) -> Result<Image> {
        self.system_for(x)?.score(x, t)
    }

    pub fn set_params(&mut self, params: ShearletParams, experts: Vec<Expert>) -> Result<()> {
        *self = Self::new(params, experts)?;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        H1_TAPS
            + P_SIDE * P_SIDE
            + self.n_bands()
            + self.experts.iter().map(Expert::n_params).sum::<usize>()
    }

    /// Flat layout `[h1 | P | lambdas | expert weights]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.params.h1.clone();
        p.extend(&self.params.p);
        p.extend(&self.params.lambdas);
        for e in &self.experts {
            p.extend(e.params());
        }
        p
    }

    /// Inverse of [`ShearletModel::flat_params`] with every block projected.
    pub fn set_flat_params_projected(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return invalid("parameter vector length mismatch");
        }
        let (raw, mut experts) = self.split_flat(p);
        for (e, w) in experts.iter_mut().zip(&raw.1) {
            e.set_params(w)?;
        }
        let params = project_shearlet_params(&raw.0)?;
        self.set_params(params, experts)
    }

    #[allow(clippy::type_complexity)]
    fn split_flat(&self, p: &[f64]) -> ((ShearletParams, Vec<Vec<f64>>), Vec<Expert>) {
        let nb = self.n_bands();
        let np = P_SIDE * P_SIDE;
        let params = ShearletParams {
            h1: p[..H1_TAPS].to_vec(),
            p: p[H1_TAPS..H1_TAPS + np].to_vec(),
            scales: self.params.scales,
            lambdas: p[H1_TAPS + np..H1_TAPS + np + nb].to_vec(),
        };
        let mut off = H1_TAPS + np + nb;
        let mut weights = Vec::with_capacity(nb);
        for e in &self.experts {
            weights.push(p[off..off + e.n_params()].to_vec());
            off += e.n_params();
        }
        ((params, weights), self.experts.clone())
    }

    /// Mean of `|x - y - 2t s(y)|^2 / n^2` over the batch and its gradient in
    /// the [`ShearletModel::flat_params`] layout. All images share one side.
    pub fn dsm_batch(&self, batch: &[DsmSample]) -> Result<(f64, Vec<f64>)> {
        let Some(first) = batch.first() else {
            return invalid("empty batch");
        };
        let sys = self.system_for(first.0)?;
        for (x, y, t) in batch {
            sys.check_image(x)?;
            sys.check_image(y)?;
            if !(*t >= 0.0 && t.is_finite()) {
                return invalid(format!("training times must be nonnegative, got {t}"));
            }
        }
        let n = sys.n;
        let npix = n * n;
        let nb = sys.n_bands();
        let ne: usize = self.experts.iter().map(Expert::n_params).sum();
        let chunk = batch.len().div_ceil(CHUNKS).max(1);
        let parts: Vec<Acc> = batch
            .par_chunks(chunk)
            .map(|c| {
                let mut acc = Acc::zeros(nb, npix, ne);
                for s in c {
                    sample_grad(&sys, s, &mut acc);
                }
                acc
            })
            .collect();
        let mut acc = Acc::zeros(nb, npix, ne);
        for p in parts {
            acc.add(p);
        }
        let inv = 1.0 / batch.len() as f64;
        let cons = sys.construction.as_ref().expect("built system");
        let (g_h1, g_p) = transform_backward(&sys, cons, &acc.bands);
        let mut grad = g_h1;
        grad.extend(g_p);
        grad.extend(&acc.lambdas);
        grad.extend(&acc.experts);
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok((acc.loss * inv, grad))
    }
}

/// Adds one sample's loss and gradients to `acc`. Band gradients are with
/// respect to the spectra under the pairing `Re sum conj(dG) G`.
fn sample_grad(sys: &ShearletSystem, (x, y, t): &DsmSample, acc: &mut Acc) {
    let t = *t;
    let n = sys.n;
    let npix = (n * n) as f64;
    let nb = sys.n_bands();
    let prep: Vec<Prepared> = sys.experts.iter().map(|e| e.prepare(t)).collect();
    let yf = sys.fft.forward_real(y.data());
    let unit: Vec<Vec<f64>> = (0..nb).map(|b| sys.band_coeffs(&yf, b, 1.0)).collect();
    let evals: Vec<Vec<_>> = (0..nb)
        .map(|b| {
            let l = sys.lambdas[b];
            unit[b].iter().map(|&c| prep[b].eval(l * c, true)).collect::<Vec<_>>()
        })
        .collect();
    let phi_hat: Vec<Vec<Complex64>> = evals
        .iter()
        .map(|ev| sys.fft.forward_real(&ev.iter().map(|e| e.score).collect::<Vec<_>>()))
        .collect();
    let mut s_hat = vec![Complex64::default(); n * n];
    for b in 0..nb {
        let l = sys.lambdas[b];
        for ((a, g), p) in s_hat.iter_mut().zip(&sys.spectra[b]).zip(&phi_hat[b]) {
            *a += l * g * p;
        }
    }
    sys.fft.inverse(&mut s_hat);
    let e: Vec<f64> = (0..n * n)
        .map(|i| x.data()[i] - y.data()[i] - 2.0 * t * s_hat[i].re)
        .collect();
    acc.loss += e.iter().map(|v| v * v).sum::<f64>() / npix;
    let scale = -4.0 * t / npix;
    let ef = sys.fft.forward_real(&e);
    let mut off = 0;
    for b in 0..nb {
        let l = sys.lambdas[b];
        let xi = l * sys.peaks[b];
        let e1 = sys.band_coeffs(&ef, b, 1.0);
        let ev = &evals[b];
        let q: Vec<f64> = ev.iter().zip(&e1).map(|(v, &a)| v.dscore_dx * l * a).collect();
        let q_hat = sys.fft.forward_real(&q);
        let mut rate_term = 0.0;
        let mut gl = 0.0;
        let np = sys.experts[b].n_params();
        for i in 0..n * n {
            let ae = l * e1[i];
            rate_term += ae * ev[i].dscore_drate;
            gl += e1[i] * ev[i].score + ev[i].dscore_dx * ae * unit[b][i];
            for p in 0..np {
                acc.experts[off + p] += scale * ae * ev[i].dscore_dparams[p];
            }
        }
        off += np;
        acc.lambdas[b] += scale * (gl + rate_term * 2.0 * xi * sys.peaks[b]);
        let gb = &mut acc.bands[b];
        let k = scale * l / npix;
        for ((g, (ehat, ph)), (yh, qh)) in gb
            .iter_mut()
            .zip(ef.iter().zip(&phi_hat[b]))
            .zip(yf.iter().zip(&q_hat))
        {
            *g += k * (ehat * ph.conj() + yh * qh.conj());
        }
        let at = sys.peak_at[b];
        let z = sys.spectra[b][at];
        gb[at] += scale * rate_term * 2.0 * xi * l * z / z.norm();
    }
}

/// Chains band-spectrum gradients back to `(h1, P)`.
fn transform_backward(
    sys: &ShearletSystem,
    cons: &Construction,
    g_bands: &[Vec<Complex64>],
) -> (Vec<f64>, Vec<f64>) {
    let n = sys.n;
    let h1 = &cons.params.h1;
    let scales = cons.params.scales;
    let d = derived(h1, scales);
    let ns = SHEARS.len();
    let mut g_wedge = vec![vec![Complex64::default(); n * n]; ns];
    let mut g_bp = vec![vec![Complex64::default(); n * n]; scales];
    for j in 0..scales {
        let bp = &cons.bandpass[j];
        for k in 0..ns {
            let w = &cons.wedges[k];
            let g0 = &g_bands[band_index(j, 0, k)];
            let g1 = transpose(&g_bands[band_index(j, 1, k)], n);
            for i in 0..n * n {
                g_wedge[k][i] += bp[i] * (g0[i] + g1[i]);
                g_bp[j][i] += w[i] * (g0[i] + g1[i]).conj();
            }
        }
    }
    let inputs = WedgeInputs {
        p: &cons.params.p,
        p_side: P_SIDE,
        low2: &d.low2,
        lp: h1,
        lpf: &d.lpf,
    };
    let wg = wedges_backward(&sys.fft, n, &inputs, &cons.trace, &g_wedge);

    let mut g_h1 = wg.lp.clone();
    for (i, g) in wg.lpf.iter().enumerate() {
        g_h1[H1_TAPS - 1 - i] += g;
    }
    let (ga, gb) = conv1_adj(&wg.low2, h1, &upsample1(h1));
    for (i, g) in ga.iter().zip(upsample1_adj(&gb)).map(|(a, b)| a + b).enumerate() {
        g_h1[i] += g;
    }
    let mut g_high: Vec<Vec<f64>> = d
        .highs
        .iter()
        .zip(&g_bp)
        .map(|(f, g)| row_filter_spectrum_adj(g, f.len(), n))
        .collect();
    for j in 0..scales - 1 {
        let up = upsample1(&d.highs[j + 1]);
        let (ga, gb) = conv1_adj(&g_high[j], h1, &up);
        for (a, b) in g_h1.iter_mut().zip(ga) {
            *a += b;
        }
        for (a, b) in g_high[j + 1].iter_mut().zip(upsample1_adj(&gb)) {
            *a += b;
        }
    }
    for (a, b) in g_h1.iter_mut().zip(mirror_filter(&g_high[scales - 1])) {
        *a += b;
    }
    (g_h1, wg.p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Image {
        Image::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
    }

    fn default_system(n: usize) -> ShearletSystem {
        let m = ShearletModel::init(2, 9).unwrap();
        m.system(n).unwrap().as_ref().clone()
    }

    #[test]
    fn default_system_has_twenty_bands_and_mirrored_cones() {
        let s = default_system(32);
        assert_eq!(s.n_bands(), 20);
        for j in 0..2 {
            for k in 0..5 {
                let a = &s.spectra()[band_index(j, 0, k)];
                let b = &s.spectra()[band_index(j, 1, k)];
                assert_eq!(&transpose(a, 32), b);
            }
        }
        assert!(s.xis().iter().all(|&x| x > 0.0));
        for (e, x) in s.experts().iter().zip(s.xis()) {
            assert!((e.rate() - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn default_spectra_are_real_filters() {
        // a real filter has a Hermitian spectrum
        let s = default_system(16);
        let n = 16;
        for g in s.spectra() {
            for r in 0..n {
                for c in 0..n {
                    let m = g[((n - r) % n) * n + (n - c) % n];
                    assert!((g[r * n + c] - m.conj()).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let s = default_system(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_image(&mut rng, 16, 1.0);
        let c: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..256).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ax = s.analysis(&x).unwrap();
        let lhs: f64 = ax.iter().zip(&c).flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q)).sum();
        let atc = s.adjoint(&c).unwrap();
        let rhs: f64 = x.data().iter().zip(atc.data()).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn impulse_gives_filters_and_constant_gives_zero() {
        let n = 16;
        let s = default_system(n);
        let mut delta = Image::zeros(n, n);
        delta.set(0, 0, 1.0);
        let c = s.analysis(&delta).unwrap();
        for (b, band) in c.iter().enumerate() {
            let mut g: Vec<Complex64> = s.spectra()[b].iter().map(|z| z.conj()).collect();
            s.fft.inverse(&mut g);
            for (v, z) in band.iter().zip(&g) {
                assert!((v - s.lambdas()[b] * z.re).abs() < 1e-12);
            }
        }
        let c = s.analysis(&Image::filled(n, n, 0.7)).unwrap();
        for band in &c {
            assert!(band.iter().all(|v| v.abs() < 1e-12));
        }
        for g in s.spectra() {
            assert!(g[0].norm() < 1e-12);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let n = 16;
        let s = default_system(n);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_image(&mut rng, n, 0.3);
        let t = 0.002;
        let sc = s.score(&x, t).unwrap();
        let h = 1e-5;
        for _ in 0..50 {
            let i = rng.random_range(0..n * n);
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (s.log_density(&xp, t).unwrap() - s.log_density(&xm, t).unwrap()) / (2.0 * h);
            let a = sc.data()[i];
            assert!((fd - a).abs() <= 1e-5 * a.abs().max(1e-2), "{fd} vs {a}");
        }
        let zero = s.score(&Image::zeros(n, n), t).unwrap();
        assert!(zero.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn all_pass_band_is_a_per_pixel_gmm() {
        let n = 4;
        let e = GmmExpert::with_sigma0(2, 0.3, 0.2, 1.0, vec![0.5]).unwrap();
        let s = ShearletSystem::from_spectra(
            n,
            vec![vec![Complex64::new(1.0, 0.0); n * n]],
            vec![1.0],
            vec![Expert::Gmm(e.clone())],
        )
        .unwrap();
        assert_eq!(s.xis(), vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_image(&mut rng, n, 0.6);
        for t in [0.0, 0.01, 0.3] {
            // explicit mixture over all 2^16 mean configurations
            let var = 0.04 + 2.0 * t;
            let mut total = 0.0;
            for mask in 0u32..1 << 16 {
                let mut logp = 0.0;
                for (i, &v) in x.data().iter().enumerate() {
                    let mu = if mask >> i & 1 == 1 { 0.3 } else { -0.3 };
                    logp += (0.5f64).ln() - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
                        - (v - mu).powi(2) / (2.0 * var);
                }
                total += logp.exp();
            }
            let got = s.log_density(&x, t).unwrap();
            assert!((got - total.ln()).abs() < 1e-10 * total.ln().abs().max(1.0));
        }
    }

    #[test]
    fn overlap_and_flatness_diagnostics() {
        let s = default_system(64);
        let m = s.overlap_matrix();
        for i in 0..20 {
            assert_eq!(m[(i, i)], 1.0);
        }
        let mean = mean_off_diagonal(&m);
        assert!(mean < 0.35, "mean off-diagonal overlap {mean}");
        let f = s.flatness_report().unwrap();
        assert!(f.iter().all(|&r| r > 0.0 && r <= 1.0));

        let n = 8;
        let mut flat = vec![Complex64::default(); n * n];
        for v in flat.iter_mut().take(10) {
            *v = Complex64::new(2.0, 0.0);
        }
        let g = || Expert::Gmm(GmmExpert::new(3, 0.5, 1.0).unwrap());
        let t = ShearletSystem::from_spectra(
            n,
            vec![flat.clone(), flat.clone()],
            vec![1.0, 1.0],
            vec![g(), g()],
        )
        .unwrap();
        assert_eq!(t.flatness_report().unwrap(), vec![1.0, 1.0]);
        assert!((t.overlap_matrix()[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(flatness(&[Complex64::default(); 4]).is_none());
        assert!(matches!(
            ShearletSystem::from_spectra(n, vec![vec![Complex64::default(); n * n]], vec![1.0], vec![g()]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn parameter_projection() {
        let p = ShearletParams::default_for(2);
        assert_eq!(project_shearlet_params(&p).unwrap().h1, p.h1);
        let mut q = p.clone();
        q.h1.iter_mut().for_each(|v| *v += 0.25);
        let r = project_shearlet_params(&q).unwrap();
        for (a, b) in r.h1.iter().zip(&p.h1) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        q.p = (0..289).map(|_| rng.random_range(-1.0..1.0)).collect();
        q.lambdas[3] = -0.5;
        let r = project_shearlet_params(&q).unwrap();
        let l1: f64 = r.p.iter().map(|v| v.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-10);
        for (a, b) in r.p.iter().zip(&q.p) {
            assert!(*a == 0.0 || a.signum() == b.signum());
        }
        assert_eq!(r.lambdas[3], 0.0);
        r.validate().unwrap();
        q.p = vec![0.0; 289];
        assert!(project_shearlet_params(&q).is_err());
        assert!(ShearletSystem::build(&p, 12, ShearletModel::init(2, 3).unwrap().experts.clone()).is_ok());
        assert!(ShearletSystem::build(&p, 9, Vec::new()).is_err());
    }

    #[test]
    fn precision_eigenvalues_follow_the_diffusion_rule() {
        let n = 8;
        let s = default_system(n);
        let sigma0_sq = 0.01;
        let t = 0.03;
        // precision = sum_b K_b^T K_b / sigma0^2 with unit-weight band operators
        let d = n * n;
        let mut k = DMatrix::zeros(d * s.n_bands(), d);
        for col in 0..d {
            let mut e = Image::zeros(n, n);
            e.data_mut()[col] = 1.0;
            let c = s.analysis(&e).unwrap();
            for (b, band) in c.iter().enumerate() {
                for (i, v) in band.iter().enumerate() {
                    k[(b * d + i, col)] = v / s.lambdas()[b];
                }
            }
        }
        let prec = k.transpose() * &k / sigma0_sq;
        let eig = prec.symmetric_eigen();
        let top = eig.eigenvalues.max();
        let mut direct: Vec<f64> = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v > 1e-9 * top)
            .map(|v| 1.0 / v + 2.0 * t)
            .collect();
        let mut rule: Vec<f64> = (0..d)
            .map(|i| s.spectra().iter().map(|g| g[i].norm_sqr()).sum::<f64>())
            .filter(|&v| v / sigma0_sq > 1e-9 * top)
            .map(|v| (sigma0_sq + 2.0 * t * v) / v)
            .collect();
        direct.sort_by(f64::total_cmp);
        rule.sort_by(f64::total_cmp);
        assert_eq!(direct.len(), rule.len());
        for (a, b) in direct.iter().zip(&rule) {
            assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
        }
    }

    fn fd_model() -> ShearletModel {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ShearletParams::default_for(2);
        // break the symmetry of h1 so every tap matters
        for v in params.h1.iter_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
        params = project_shearlet_params(&params).unwrap();
        params.lambdas = (0..20).map(|_| rng.random_range(0.6..1.4)).collect();
        let experts = (0..20)
            .map(|_| {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = 2.0 * (w[0] + w[1]) + w[2];
                let half: Vec<f64> = w.iter().map(|v| v / s).collect();
                Expert::Gmm(GmmExpert::with_sigma0(5, 0.5, 0.25, 1.0, half).unwrap())
            })
            .collect();
        ShearletModel::new(params, experts).unwrap()
    }

    fn with_raw(m: &ShearletModel, p: &[f64]) -> ShearletModel {
        let ((params, weights), mut experts) = m.split_flat(p);
        for (e, w) in experts.iter_mut().zip(&weights) {
            e.set_params_raw(w);
        }
        ShearletModel {
            params,
            experts,
            cache: Mutex::new(None),
        }
    }

    fn raw_loss(m: &ShearletModel, batch: &[DsmSample]) -> f64 {
        // unchecked so that perturbations may leave the feasible set
        let sys = ShearletSystem::build_unchecked(&m.params, batch[0].0.width(), m.experts.clone())
            .unwrap();
        let n2 = (sys.n * sys.n) as f64;
        let mut loss = 0.0;
        for (x, y, t) in batch {
            let s = sys.score(y, *t).unwrap();
            loss += (0..x.len())
                .map(|i| (x.data()[i] - y.data()[i] - 2.0 * t * s.data()[i]).powi(2))
                .sum::<f64>()
                / n2;
        }
        loss / batch.len() as f64
    }

    #[test]
    fn dsm_gradient_matches_finite_differences() {
        let n = 16;
        let m = fd_model();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let imgs: Vec<(Image, Image, f64)> = (0..2)
            .map(|i| {
                let x = rand_image(&mut rng, n, 0.5);
                let t = [0.002, 0.01][i];
                let y = x.add_noise((2.0f64 * t).sqrt(), &mut rng);
                (x, y, t)
            })
            .collect();
        let batch: Vec<DsmSample> = imgs.iter().map(|(x, y, t)| (x, y, *t)).collect();
        let (loss, grad) = m.dsm_batch(&batch).unwrap();
        let p0 = m.flat_params();
        assert!((raw_loss(&m, &batch) - loss).abs() < 1e-12 * loss);
        let mut idx: Vec<usize> = (0..9).collect();
        idx.extend([9 + 8 * 17 + 8, 9 + 7 * 17 + 9, 9 + 3 * 17 + 5, 9 + 10 * 17 + 12]);
        idx.extend([298, 305, 317]);
        idx.extend([318, 318 + 13, 318 + 59]);
        for &i in &idx {
            let h = 1e-6 * p0[i].abs().max(1e-2);
            let mut pp = p0.clone();
            pp[i] += h;
            let lp = raw_loss(&with_raw(&m, &pp), &batch);
            pp[i] -= 2.0 * h;
            let lm = raw_loss(&with_raw(&m, &pp), &batch);
            let fd = (lp - lm) / (2.0 * h);
            let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * grad[i].abs().max(1e-3 * scale),
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }
}
