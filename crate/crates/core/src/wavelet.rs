//! Orthonormal 2-D wavelet prior with one expert per detail sub-band.
//!
//! The periodized separable DWT is generated by a learnable low-pass `h`
//! kept in the orthonormal feasible set. Detail coefficients of band `b`
//! are scaled by `lambda_b` and modeled by an expert with rate
//! `lambda_b^2`; the approximation band is left unmodeled.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::experts::{Expert, GmmExpert, Prepared};
use crate::image::Image;
use crate::mathkit::{
    daubechies, highpass_from_lowpass, project_wavelet_constraints, quantile, wavelet_residual,
    LagrangeMultipliers,
};

/// Sub-band directions in storage order.
pub const DIRECTIONS: [&str; 3] = ["v", "h", "d"];

/// Tolerance for membership of `h` in the feasible set.
pub const OMEGA_TOLERANCE: f64 = 1e-6;

/// Detail and approximation coefficients of a `levels`-level transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    /// Band `3 * (level - 1) + direction`, level 1 finest.
    pub details: Vec<Image>,
    pub approx: Image,
}

impl WaveletCoeffs {
    pub fn levels(&self) -> usize {
        self.details.len() / 3
    }

    pub fn detail(&self, level: usize, direction: usize) -> &Image {
        &self.details[3 * (level - 1) + direction]
    }

    /// Squared Euclidean norm over every coefficient.
    pub fn norm_squared(&self) -> f64 {
        self.details
            .iter()
            .chain(std::iter::once(&self.approx))
            .flat_map(|b| b.data().iter())
            .map(|v| v * v)
            .sum()
    }
}

fn check_shape(n_rows: usize, n_cols: usize, levels: usize) -> Result<()> {
    if n_rows != n_cols {
        return invalid(format!(
            "wavelet transforms need square images, got {n_cols}x{n_rows}"
        ));
    }
    if levels == 0 || n_rows == 0 || !n_rows.is_multiple_of(1 << levels) {
        return invalid(format!(
            "image side {n_rows} is not divisible by 2^{levels}"
        ));
    }
    Ok(())
}

type Pair<'a> = (&'a [f64], &'a [f64]);

/// One separable analysis level on an `n x n` buffer. Rows are filtered
/// with `row`, columns with `col`. Returns `[ll, v, h, d]`.
fn level_2d(x: &[f64], n: usize, row: Pair, col: Pair) -> [Vec<f64>; 4] {
    let m = n / 2;
    let k = row.0.len();
    let mut lo = vec![0.0; n * m];
    let mut hi = vec![0.0; n * m];
    for r in 0..n {
        let xr = &x[r * n..(r + 1) * n];
        for o in 0..m {
            let (mut a, mut d) = (0.0, 0.0);
            for i in 0..k {
                let v = xr[(2 * o + i) % n];
                a += row.0[i] * v;
                d += row.1[i] * v;
            }
            lo[r * m + o] = a;
            hi[r * m + o] = d;
        }
    }
    let mut out = [
        vec![0.0; m * m],
        vec![0.0; m * m],
        vec![0.0; m * m],
        vec![0.0; m * m],
    ];
    for o in 0..m {
        for i in 0..k {
            let src = (2 * o + i) % n;
            let (hc, gc) = (col.0[i], col.1[i]);
            for c in 0..m {
                let l = lo[src * m + c];
                let h = hi[src * m + c];
                out[0][o * m + c] += hc * l;
                out[1][o * m + c] += hc * h;
                out[2][o * m + c] += gc * l;
                out[3][o * m + c] += gc * h;
            }
        }
    }
    out
}

/// Adjoint of [`level_2d`].
fn level_2d_adjoint(bands: [&[f64]; 4], n: usize, row: Pair, col: Pair) -> Vec<f64> {
    let m = n / 2;
    let k = row.0.len();
    let mut lo = vec![0.0; n * m];
    let mut hi = vec![0.0; n * m];
    for o in 0..m {
        for i in 0..k {
            let dst = (2 * o + i) % n;
            let (hc, gc) = (col.0[i], col.1[i]);
            for c in 0..m {
                let j = o * m + c;
                lo[dst * m + c] += hc * bands[0][j] + gc * bands[2][j];
                hi[dst * m + c] += hc * bands[1][j] + gc * bands[3][j];
            }
        }
    }
    let mut x = vec![0.0; n * n];
    for r in 0..n {
        for o in 0..m {
            let (a, d) = (lo[r * m + o], hi[r * m + o]);
            for i in 0..k {
                x[r * n + (2 * o + i) % n] += row.0[i] * a + row.1[i] * d;
            }
        }
    }
    x
}

/// Flat analysis: detail bands in storage order, then the approximation.
fn analyze(x: &[f64], n: usize, levels: usize, h: &[f64], g: &[f64]) -> Vec<Vec<f64>> {
    let mut bands = Vec::with_capacity(3 * levels + 1);
    let mut a = x.to_vec();
    let mut side = n;
    for _ in 0..levels {
        let [ll, v, hh, d] = level_2d(&a, side, (h, g), (h, g));
        bands.push(v);
        bands.push(hh);
        bands.push(d);
        a = ll;
        side /= 2;
    }
    bands.push(a);
    bands
}

fn synthesize(bands: &[Vec<f64>], n: usize, levels: usize, h: &[f64], g: &[f64]) -> Vec<f64> {
    let mut a = bands[3 * levels].clone();
    for lev in (0..levels).rev() {
        let side = n >> lev;
        a = level_2d_adjoint(
            [&a, &bands[3 * lev], &bands[3 * lev + 1], &bands[3 * lev + 2]],
            side,
            (h, g),
            (h, g),
        );
    }
    a
}

/// Directional derivative of [`analyze`] with respect to the filters,
/// along `(hd, gd)`, for a fixed input.
fn analyze_tangent(
    x: &[f64],
    n: usize,
    levels: usize,
    f: Pair,
    fd: Pair,
) -> Vec<Vec<f64>> {
    let mut bands = Vec::with_capacity(3 * levels + 1);
    let mut a = x.to_vec();
    let mut ad = vec![0.0; x.len()];
    let mut side = n;
    for lev in 0..levels {
        let p = level_2d(&a, side, f, f);
        let t1 = level_2d(&a, side, fd, f);
        let t2 = level_2d(&a, side, f, fd);
        let t3 = if lev == 0 {
            None
        } else {
            Some(level_2d(&ad, side, f, f))
        };
        let mut tan: [Vec<f64>; 4] = Default::default();
        for b in 0..4 {
            tan[b] = t1[b]
                .iter()
                .zip(&t2[b])
                .enumerate()
                .map(|(i, (u, v))| u + v + t3.as_ref().map_or(0.0, |t| t[b][i]))
                .collect();
        }
        let [tll, tv, th, tdd] = tan;
        bands.push(tv);
        bands.push(th);
        bands.push(tdd);
        let [ll, ..] = p;
        a = ll;
        ad = tll;
        side /= 2;
    }
    bands.push(ad);
    bands
}

fn to_image(v: Vec<f64>, side: usize) -> Image {
    Image::from_vec(side, side, v).expect("band size")
}

/// Periodized orthonormal analysis with `levels` levels.
pub fn dwt2(x: &Image, h: &[f64], levels: usize) -> Result<WaveletCoeffs> {
    check_shape(x.height(), x.width(), levels)?;
    if h.is_empty() || !h.len().is_multiple_of(2) {
        return invalid("generating sequence length must be even");
    }
    let g = highpass_from_lowpass(h);
    let n = x.width();
    let mut bands = analyze(x.data(), n, levels, h, &g);
    let approx = to_image(bands.pop().expect("approx band"), n >> levels);
    let details = bands
        .into_iter()
        .enumerate()
        .map(|(i, b)| to_image(b, n >> (i / 3 + 1)))
        .collect();
    Ok(WaveletCoeffs { details, approx })
}

/// Synthesis, the adjoint (and inverse) of [`dwt2`].
pub fn idwt2(c: &WaveletCoeffs, h: &[f64]) -> Result<Image> {
    let levels = c.levels();
    if levels == 0 || c.details.len() != 3 * levels {
        return invalid("coefficient set has no complete level");
    }
    let n = c.approx.width() << levels;
    for (i, b) in c.details.iter().enumerate() {
        let side = n >> (i / 3 + 1);
        if b.width() != side || b.height() != side {
            return invalid("inconsistent sub-band sizes");
        }
    }
    let g = highpass_from_lowpass(h);
    let mut bands: Vec<Vec<f64>> = c.details.iter().map(|b| b.data().to_vec()).collect();
    bands.push(c.approx.data().to_vec());
    Ok(to_image(synthesize(&bands, n, levels, h, &g), n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletModel {
    h: Vec<f64>,
    levels: usize,
    lambdas: Vec<f64>,
    experts: Vec<Expert>,
    multipliers: LagrangeMultipliers,
}

impl WaveletModel {
    pub fn new(h: Vec<f64>, levels: usize, lambdas: Vec<f64>, experts: Vec<Expert>) -> Result<Self> {
        if levels == 0 {
            return invalid("at least one level is required");
        }
        if lambdas.len() != 3 * levels || experts.len() != 3 * levels {
            return invalid(format!(
                "{levels} levels need {} sub-band weights and experts",
                3 * levels
            ));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return invalid("sub-band weights must be nonnegative");
        }
        let taps = h.len();
        let mut m = Self {
            h,
            levels,
            lambdas,
            experts,
            multipliers: LagrangeMultipliers::zeros(taps),
        };
        m.check_h()?;
        m.sync_rates();
        Ok(m)
    }

    /// Daubechies start, unit weights, uniform GMM experts on `[-1, 1]`.
    pub fn init(taps: usize, levels: usize, components: usize) -> Result<Self> {
        let experts = (0..3 * levels)
            .map(|_| GmmExpert::new(components, 1.0, 1.0).map(Expert::Gmm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(daubechies(taps)?, levels, vec![1.0; 3 * levels], experts)
    }

    fn check_h(&self) -> Result<()> {
        if self.h.is_empty() || !self.h.len().is_multiple_of(2) {
            return invalid("generating sequence length must be even");
        }
        let r = wavelet_residual(&self.h);
        if !(r < OMEGA_TOLERANCE) {
            return Err(Error::Degenerate(format!(
                "generating sequence violates the orthonormality constraints by {r:.3e}"
            )));
        }
        Ok(())
    }

    fn sync_rates(&mut self) {
        for (e, l) in self.experts.iter_mut().zip(&self.lambdas) {
            e.set_rate(l * l);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check_h()?;
        for (e, l) in self.experts.iter().zip(&self.lambdas) {
            if *l < 0.0 || (e.rate() - l * l).abs() > 1e-10 * (1.0 + l * l) {
                return Err(Error::Degenerate("expert rate differs from squared weight".into()));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [Expert] {
        &mut self.experts
    }

    pub fn multipliers(&self) -> &LagrangeMultipliers {
        &self.multipliers
    }

    pub fn n_params(&self) -> usize {
        self.h.len()
            + self.lambdas.len()
            + self.experts.iter().map(Expert::n_params).sum::<usize>()
    }

    /// Sets `h` (checked against the feasible set) and weights.
    pub fn set_transform(&mut self, h: Vec<f64>, lambdas: Vec<f64>) -> Result<()> {
        if h.len() != self.h.len() || lambdas.len() != self.lambdas.len() {
            return invalid("parameter shape mismatch");
        }
        let old = (std::mem::replace(&mut self.h, h), std::mem::replace(&mut self.lambdas, lambdas));
        if let Err(e) = self.check_h() {
            (self.h, self.lambdas) = old;
            return Err(e);
        }
        self.sync_rates();
        Ok(())
    }

    /// Takes raw parameters, then projects `h` onto the feasible set with
    /// warm-started multipliers and clips the weights at zero.
    pub fn project_transform(&mut self, h: &[f64], lambdas: &[f64]) -> Result<()> {
        let proj = project_wavelet_constraints(h, &self.multipliers)?;
        if !proj.converged || wavelet_residual(&proj.h) >= OMEGA_TOLERANCE {
            return Err(Error::Numerical(format!(
                "wavelet projection stalled at residual {:.3e}",
                proj.residual
            )));
        }
        self.multipliers = proj.multipliers;
        self.h = proj.h;
        self.lambdas = lambdas.iter().map(|l| l.max(0.0)).collect();
        self.sync_rates();
        Ok(())
    }

    pub fn set_multipliers(&mut self, m: LagrangeMultipliers) {
        self.multipliers = m;
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        check_shape(x.height(), x.width(), self.levels)
    }

    fn analyze(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        analyze(x, n, self.levels, &self.h, &highpass_from_lowpass(&self.h))
    }

    fn synthesize(&self, bands: &[Vec<f64>], n: usize) -> Vec<f64> {
        synthesize(bands, n, self.levels, &self.h, &highpass_from_lowpass(&self.h))
    }

    pub fn prepare(&self, t: f64) -> Vec<Prepared> {
        self.experts.iter().map(|e| e.prepare(t)).collect()
    }

    /// Sum over detail coefficients of `log psi_b(lambda_b c, t)`.
    pub fn log_density(&self, x: &Image, t: f64) -> Result<f64> {
        self.check_image(x)?;
        check_time(t)?;
        let prep = self.prepare(t);
        let bands = self.analyze(x.data(), x.width());
        let mut acc = 0.0;
        for (b, band) in bands[..3 * self.levels].iter().enumerate() {
            let l = self.lambdas[b];
            acc += band.iter().map(|&c| prep[b].log_density(l * c)).sum::<f64>();
        }
        Ok(acc)
    }

    fn band_scores(&self, bands: &mut [Vec<f64>], prep: &[Prepared]) {
        let nb = 3 * self.levels;
        for (b, band) in bands[..nb].iter_mut().enumerate() {
            let l = self.lambdas[b];
            for c in band.iter_mut() {
                *c = l * prep[b].score(l * *c);
            }
        }
        bands[nb].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn score(&self, x: &Image, t: f64) -> Result<Image> {
        self.check_image(x)?;
        check_time(t)?;
        let prep = self.prepare(t);
        let n = x.width();
        let mut bands = self.analyze(x.data(), n);
        self.band_scores(&mut bands, &prep);
        Ok(to_image(self.synthesize(&bands, n), n))
    }

    /// Coefficient-wise empirical Bayes shrinkage; the approximation band
    /// passes through.
    pub fn shrink_denoise(&self, y: &Image, t: f64) -> Result<Image> {
        self.check_image(y)?;
        check_time(t)?;
        if t == 0.0 {
            return Ok(y.clone());
        }
        let prep = self.prepare(t);
        let n = y.width();
        let mut bands = self.analyze(y.data(), n);
        for (b, band) in bands[..3 * self.levels].iter_mut().enumerate() {
            let l = self.lambdas[b];
            if l == 0.0 {
                continue;
            }
            for c in band.iter_mut() {
                let u = l * *c;
                *c = (u + 2.0 * t * l * l * prep[b].score(u)) / l;
            }
        }
        Ok(to_image(self.synthesize(&bands, n), n))
    }

    /// `1.1` times the `0.999`-quantile of `|lambda_b c|` per band.
    pub fn calibrate_etas(&self, images: &[Image]) -> Result<Vec<f64>> {
        if images.is_empty() {
            return invalid("calibration needs at least one image");
        }
        let nb = 3 * self.levels;
        let mut per_band: Vec<Vec<f64>> = vec![Vec::new(); nb];
        for img in images {
            self.check_image(img)?;
            let bands = self.analyze(img.data(), img.width());
            for b in 0..nb {
                let l = self.lambdas[b];
                per_band[b].extend(bands[b].iter().map(|c| (l * c).abs()));
            }
        }
        let mut etas = Vec::with_capacity(nb);
        for (b, v) in per_band.iter().enumerate() {
            let eta = 1.1 * quantile(v, 0.999)?;
            if !(eta > 0.0) {
                return Err(Error::Degenerate(format!(
                    "sub-band {b} has no nonzero responses to calibrate on"
                )));
            }
            etas.push(eta);
        }
        Ok(etas)
    }

    /// Rescales each GMM expert's mean grid.
    pub fn set_etas(&mut self, etas: &[f64]) -> Result<()> {
        if etas.len() != self.experts.len() {
            return invalid("one eta per sub-band expected");
        }
        for (e, &eta) in self.experts.iter_mut().zip(etas) {
            if let Expert::Gmm(g) = e {
                g.set_eta(eta)?;
            }
        }
        Ok(())
    }

    /// Denoising-score-matching loss `|x - y - 2t s(y)|^2 / n` of one image
    /// pair and its gradient in the layout `[h | lambdas | expert weights]`.
    pub fn dsm_loss_grad(&self, x: &Image, y: &Image, t: f64, prep: &[Prepared]) -> (f64, Vec<f64>) {
        let n = x.width();
        let npix = (n * n) as f64;
        let nb = 3 * self.levels;
        let g = highpass_from_lowpass(&self.h);
        let k = self.h.len();
        let c = self.analyze(y.data(), n);

        let mut phi = c.clone();
        let mut dphi = vec![Vec::new(); nb];
        let mut evals = vec![Vec::new(); nb];
        for b in 0..nb {
            let l = self.lambdas[b];
            evals[b] = c[b].iter().map(|&v| prep[b].eval(l * v, true)).collect::<Vec<_>>();
            phi[b] = evals[b].iter().map(|e| l * e.score).collect();
            dphi[b] = evals[b].iter().map(|e| l * l * e.dscore_dx).collect();
        }
        phi[nb].iter_mut().for_each(|v| *v = 0.0);
        let s = self.synthesize(&phi, n);
        let e: Vec<f64> = (0..n * n)
            .map(|i| x.data()[i] - y.data()[i] - 2.0 * t * s[i])
            .collect();
        let loss = e.iter().map(|v| v * v).sum::<f64>() / npix;
        let scale = -4.0 * t / npix;
        let ec = self.analyze(&e, n);

        let mut grad = vec![0.0; self.n_params()];
        // h: <dW e, phi> + <W e * phi', dW y>
        for kk in 0..k {
            let mut hd = vec![0.0; k];
            hd[kk] = 1.0;
            let gd = highpass_from_lowpass(&hd);
            let te = analyze_tangent(&e, n, self.levels, (&self.h, &g), (&hd, &gd));
            let ty = analyze_tangent(y.data(), n, self.levels, (&self.h, &g), (&hd, &gd));
            let mut acc = 0.0;
            for b in 0..nb {
                for i in 0..phi[b].len() {
                    acc += te[b][i] * phi[b][i] + ec[b][i] * dphi[b][i] * ty[b][i];
                }
            }
            grad[kk] = scale * acc;
        }
        let mut off = k + nb;
        for b in 0..nb {
            let l = self.lambdas[b];
            let np = self.experts[b].n_params();
            let mut gl = 0.0;
            for (i, ev) in evals[b].iter().enumerate() {
                let eb = ec[b][i];
                gl += eb * (ev.score + l * (ev.dscore_dx * c[b][i] + 2.0 * l * ev.dscore_drate));
                for p in 0..np {
                    grad[off + p] += scale * eb * l * ev.dscore_dparams[p];
                }
            }
            grad[k + b] = scale * gl;
            off += np;
        }
        (loss, grad)
    }

    /// Parameters in the [`WaveletModel::dsm_loss_grad`] layout.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.h.clone();
        p.extend(&self.lambdas);
        for e in &self.experts {
            p.extend(e.params());
        }
        p
    }

    /// Inverse of [`WaveletModel::params`], with every block projected.
    pub fn set_params_projected(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return invalid("parameter vector length mismatch");
        }
        let k = self.h.len();
        let nb = 3 * self.levels;
        let h = p[..k].to_vec();
        let lambdas = p[k..k + nb].to_vec();
        let mut off = k + nb;
        for e in self.experts.iter_mut() {
            let np = e.n_params();
            e.set_params(&p[off..off + np])?;
            off += np;
        }
        self.project_transform(&h, &lambdas)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("diffusion time must be nonnegative, got {t}"));
    }
    Ok(())
}

/// Random admissible square crop of side `n` from an image.
pub(crate) fn random_crop<R: Rng + ?Sized>(img: &Image, n: usize, rng: &mut R) -> Result<Image> {
    if img.width() < n || img.height() < n {
        return invalid(format!(
            "a {}x{} image is smaller than the {n}x{n} crop",
            img.width(),
            img.height()
        ));
    }
    let top = rng.random_range(0..=img.height() - n);
    let left = rng.random_range(0..=img.width() - n);
    img.crop(top, left, n, n)
}
