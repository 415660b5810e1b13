//! Product-of-experts prior on `b x b` patches over orthogonal filters.
//!
//! Each filter response `<k_j, p>` is modeled by a one-dimensional expert
//! with diffusion rate `|k_j|^2`, so the density of the patch diffused to
//! time `t` is again a product of the same experts with grown variances.
//! Whole images are handled by averaging overlapping patch scores (EPLL).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::experts::{Expert, GmmExpert, GsmExpert, Prepared};
use crate::image::Image;
use crate::mathkit::{orthogonalize_filters, project_zero_mean, FilterBank};
use crate::model::{chunked_sum, DsmSample};

/// Alternation count for filter orthogonalization.
pub const ORTHO_ITERATIONS: usize = 3;

/// Allowed `|<k_i, k_j>|` relative to the largest squared norm.
const ORTHO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchModel {
    side: usize,
    bank: FilterBank,
    experts: Vec<Expert>,
}

impl PatchModel {
    /// Builds a model from an `a x J` filter matrix and `J` experts. Expert
    /// rates are set to the squared filter norms.
    pub fn new(side: usize, filters: DMatrix<f64>, experts: Vec<Expert>) -> Result<Self> {
        let a = side * side;
        if side == 0 || filters.nrows() != a {
            return invalid(format!(
                "filters have {} rows, expected {a} for {side}x{side} patches",
                filters.nrows()
            ));
        }
        if filters.ncols() != experts.len() || experts.is_empty() {
            return invalid(format!(
                "{} filters but {} experts",
                filters.ncols(),
                experts.len()
            ));
        }
        if filters.ncols() > a {
            return invalid("more filters than patch pixels");
        }
        if filters.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite filter entries");
        }
        let mut m = Self {
            side,
            bank: FilterBank::from_filters(filters),
            experts,
        };
        m.check_orthogonal()?;
        m.sync_rates();
        Ok(m)
    }

    /// Random zero-mean orthogonal filters (entries drawn with std `1/b`),
    /// `b^2 - 1` GMM experts with uniform weights on `[-1, 1]`.
    pub fn init_gmm<R: Rng + ?Sized>(side: usize, components: usize, rng: &mut R) -> Result<Self> {
        let filters = random_filters(side, rng)?;
        let experts = (0..filters.ncols())
            .map(|_| GmmExpert::new(components, 1.0, 1.0).map(Expert::Gmm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(side, filters, experts)
    }

    /// Same filters as [`PatchModel::init_gmm`] with GSM experts.
    pub fn init_gsm<R: Rng + ?Sized>(side: usize, scales: &[f64], rng: &mut R) -> Result<Self> {
        let filters = random_filters(side, rng)?;
        let experts = (0..filters.ncols())
            .map(|_| GsmExpert::uniform(scales.to_vec(), 1.0).map(Expert::Gsm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(side, filters, experts)
    }

    fn check_orthogonal(&self) -> Result<()> {
        let scale = self
            .bank
            .norms
            .iter()
            .fold(1.0f64, |m, n| m.max(n * n));
        let cross = self.bank.max_cross_inner();
        if cross > ORTHO_TOLERANCE * scale {
            return Err(Error::Degenerate(format!(
                "filters are not pairwise orthogonal (max |<k_i,k_j>| = {cross:.3e})"
            )));
        }
        Ok(())
    }

    fn sync_rates(&mut self) {
        for (e, n) in self.experts.iter_mut().zip(&self.bank.norms) {
            e.set_rate(n * n);
        }
    }

    /// Re-checks every stored invariant, including zero-mean filters.
    pub fn validate(&self) -> Result<()> {
        self.check_orthogonal()?;
        if self.bank.max_column_sum() > 1e-6 {
            return Err(Error::Degenerate("filters are not zero-mean".into()));
        }
        for (e, n) in self.experts.iter().zip(&self.bank.norms) {
            if (e.rate() - n * n).abs() > 1e-10 * (1.0 + n * n) {
                return Err(Error::Degenerate(
                    "expert rate differs from squared filter norm".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Pixels per patch, `a = b^2`.
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn n_filters(&self) -> usize {
        self.experts.len()
    }

    pub fn filters(&self) -> &DMatrix<f64> {
        &self.bank.filters
    }

    pub fn norms(&self) -> &[f64] {
        &self.bank.norms
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [Expert] {
        &mut self.experts
    }

    /// Learnable parameter count: filter entries plus stored expert weights.
    pub fn n_params(&self) -> usize {
        self.bank.filters.len() + self.experts.iter().map(Expert::n_params).sum::<usize>()
    }

    /// Replaces the filters without projecting (rates follow the norms).
    pub(crate) fn set_filters_raw(&mut self, filters: DMatrix<f64>) {
        self.bank = FilterBank::from_filters(filters);
        self.sync_rates();
    }

    pub fn project_filters(&mut self) -> Result<()> {
        let k = project_bank(&self.bank.filters)?;
        self.set_filters_raw(k);
        Ok(())
    }

    fn check_patch(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return invalid(format!(
                "patch has {} values, model expects {}",
                p.len(),
                self.dim()
            ));
        }
        Ok(())
    }

    pub fn prepare(&self, t: f64) -> Vec<Prepared> {
        self.experts.iter().map(|e| e.prepare(t)).collect()
    }

    pub fn responses(&self, p: &[f64]) -> Vec<f64> {
        let k = &self.bank.filters;
        (0..k.ncols())
            .map(|j| k.column(j).iter().zip(p).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn log_jacobian(&self) -> f64 {
        self.bank.norms.iter().map(|n| n.ln()).sum()
    }

    /// Normalized log density on the span of the filters.
    pub fn log_density(&self, p: &[f64], t: f64) -> Result<f64> {
        self.check_patch(p)?;
        check_time(t)?;
        let prep = self.prepare(t);
        let r = self.responses(p);
        Ok(r.iter()
            .zip(&prep)
            .map(|(&x, e)| e.log_density(x))
            .sum::<f64>()
            + self.log_jacobian())
    }

    pub fn score(&self, p: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_patch(p)?;
        check_time(t)?;
        let prep = self.prepare(t);
        let r = self.responses(p);
        let mut out = vec![0.0; self.dim()];
        for (j, (&x, e)) in r.iter().zip(&prep).enumerate() {
            let f = e.score(x);
            for (o, k) in out.iter_mut().zip(self.bank.filters.column(j).iter()) {
                *o += k * f;
            }
        }
        Ok(out)
    }

    /// `1/2 sum_j log(2 pi (sigma0^2 + 2 t |k_j|^2) / |k_j|^2)`, the
    /// normalizer that pairs with unnormalized Gaussian kernels.
    pub fn log_partition(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let mut acc = 0.0;
        for (e, n) in self.experts.iter().zip(&self.bank.norms) {
            let s0 = match e {
                Expert::Gmm(g) => g.sigma0() * g.sigma0(),
                Expert::Gsm(_) => {
                    return invalid("the closed-form partition function needs GMM experts")
                }
            };
            if *n == 0.0 {
                return Err(Error::Degenerate("zero-norm filter".into()));
            }
            let n2 = n * n;
            acc += 0.5 * (2.0 * std::f64::consts::PI * (s0 + 2.0 * t * n2) / n2).ln();
        }
        Ok(acc)
    }

    /// Scores of many patches at once; rows of `patches` are patches.
    pub fn scores(&self, patches: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let prep = self.prepare(t);
        let mut resp = patches * &self.bank.filters;
        map_columns(&mut resp, |j, x| prep[j].score(x));
        resp * self.bank.filters.transpose()
    }

    /// Draws `sum_j k_j |k_j|^-2 U_j` with `U_j ~ psi_j(., t)`.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<Vec<f64>> {
        check_time(t)?;
        let prep = self.prepare(t);
        let mut out = vec![0.0; self.dim()];
        for (j, e) in prep.iter().enumerate() {
            let n = self.bank.norms[j];
            if n == 0.0 {
                continue;
            }
            let u = e.sample(rng) / (n * n);
            for (o, k) in out.iter_mut().zip(self.bank.filters.column(j).iter()) {
                *o += k * u;
            }
        }
        Ok(out)
    }

    /// Grid index maximizing the normalized likelihood of one patch.
    pub fn estimate_noise(&self, p: &[f64], t_grid: &[f64]) -> Result<f64> {
        self.check_patch(p)?;
        let grid = NoiseGrid::new(self, t_grid)?;
        Ok(t_grid[grid.argmax(&self.responses(p))])
    }
}

impl PatchModel {
    /// Filter entries (column-major) followed by the expert weights.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.bank.filters.as_slice().to_vec();
        for e in &self.experts {
            p.extend(e.params());
        }
        p
    }

    /// Inverse of [`PatchModel::flat_params`]; filters are orthogonalized and
    /// centered, weights projected onto the simplex.
    pub fn set_flat_params_projected(&mut self, p: &[f64]) -> Result<()> {
        self.set_flat_params(p, true)
    }

    pub(crate) fn set_flat_params(&mut self, p: &[f64], project: bool) -> Result<()> {
        if p.len() != self.n_params() {
            return invalid("parameter vector length mismatch");
        }
        let (a, j) = (self.dim(), self.n_filters());
        let filters = DMatrix::from_column_slice(a, j, &p[..a * j]);
        let mut off = a * j;
        for e in self.experts.iter_mut() {
            let np = e.n_params();
            if project {
                e.set_params(&p[off..off + np])?;
            } else {
                e.set_params_raw(&p[off..off + np]);
            }
            off += np;
        }
        self.set_filters_raw(filters);
        if project {
            self.project_filters()?;
        }
        Ok(())
    }

    /// Mean of `|x - y - 2t s(y)|^2 / a` over patch pairs and its gradient in
    /// the [`PatchModel::flat_params`] layout.
    pub fn dsm_batch(&self, batch: &[DsmSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return invalid("empty batch");
        }
        for (x, y, t) in batch {
            self.check_patch(x.data())?;
            self.check_patch(y.data())?;
            if !(*t >= 0.0 && t.is_finite()) {
                return invalid(format!("training times must be nonnegative, got {t}"));
            }
        }
        let np = self.n_params();
        let (loss, mut grad) = chunked_sum(batch, np, |(x, y, t), grad| {
            self.sample_grad(x.data(), y.data(), *t, grad)
        });
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    fn sample_grad(&self, x: &[f64], y: &[f64], t: f64, grad: &mut [f64]) -> f64 {
        let a = self.dim();
        let k = &self.bank.filters;
        let r = self.responses(y);
        let evals: Vec<_> = self
            .experts
            .iter()
            .zip(&r)
            .map(|(e, &v)| e.eval(v, t, true))
            .collect();
        let mut s = vec![0.0; a];
        for (j, ev) in evals.iter().enumerate() {
            for (o, kv) in s.iter_mut().zip(k.column(j).iter()) {
                *o += kv * ev.score;
            }
        }
        let e: Vec<f64> = (0..a).map(|i| x[i] - y[i] - 2.0 * t * s[i]).collect();
        let loss = e.iter().map(|v| v * v).sum::<f64>() / a as f64;
        let scale = -4.0 * t / a as f64;
        let mut off = a * self.n_filters();
        for (j, ev) in evals.iter().enumerate() {
            let col = k.column(j);
            let ek: f64 = col.iter().zip(&e).map(|(p, q)| p * q).sum();
            let g = &mut grad[j * a..(j + 1) * a];
            for i in 0..a {
                g[i] += scale
                    * (ev.score * e[i] + ek * ev.dscore_dx * y[i] + 2.0 * ek * ev.dscore_drate * col[i]);
            }
            for (p, d) in ev.dscore_dparams.iter().enumerate() {
                grad[off + p] += scale * ek * d;
            }
            off += ev.dscore_dparams.len();
        }
        loss
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("diffusion time must be nonnegative, got {t}"));
    }
    Ok(())
}

fn random_filters<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if side < 2 {
        return invalid("patch side must be at least 2");
    }
    let a = side * side;
    let normal = Normal::new(0.0, 1.0 / side as f64).expect("valid std");
    let k = DMatrix::from_fn(a, a - 1, |_, _| normal.sample(rng));
    project_bank(&k)
}

/// Removes column means, orthogonalizes inside the zero-mean subspace, and
/// removes the (now round-off sized) means again.
fn project_bank(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = zero_mean_basis(k.nrows());
    let inner = q.transpose() * project_zero_mean(k);
    let ortho = orthogonalize_filters(&inner, ORTHO_ITERATIONS)?;
    Ok(project_zero_mean(&(q * ortho.filters)))
}

/// Orthonormal basis (`a x (a-1)`) of the vectors with zero sum: the first
/// `a - 1` columns of the Householder reflection swapping the last unit
/// vector with the normalized all-ones vector.
fn zero_mean_basis(a: usize) -> DMatrix<f64> {
    let mut v = DVector::from_element(a, 1.0 / (a as f64).sqrt());
    v[a - 1] -= 1.0;
    let vv = v.norm_squared();
    let h = if vv > 0.0 {
        DMatrix::identity(a, a) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(a, a)
    };
    h.columns(0, a - 1).into_owned()
}

/// Applies `f(column, value)` to every entry, in parallel over rows.
fn map_columns(m: &mut DMatrix<f64>, f: impl Fn(usize, f64) -> f64 + Sync) {
    let rows = m.nrows();
    if rows == 0 {
        return;
    }
    m.as_mut_slice()
        .par_chunks_mut(rows)
        .enumerate()
        .for_each(|(j, col)| {
            for v in col {
                *v = f(j, *v);
            }
        });
}

/// Per-time prepared experts for likelihood maximization over a grid.
struct NoiseGrid {
    prepared: Vec<Vec<Prepared>>,
}

impl NoiseGrid {
    fn new(m: &PatchModel, t_grid: &[f64]) -> Result<Self> {
        if t_grid.is_empty() {
            return invalid("noise grid is empty");
        }
        for &t in t_grid {
            check_time(t)?;
        }
        if t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("noise grid must be strictly increasing");
        }
        Ok(Self {
            prepared: t_grid.iter().map(|&t| m.prepare(t)).collect(),
        })
    }

    /// The Jacobian term is constant over `t`, so it is left out. Ties go to
    /// the smaller time.
    fn argmax(&self, responses: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, prep) in self.prepared.iter().enumerate() {
            let v: f64 = responses
                .iter()
                .zip(prep)
                .map(|(&x, e)| e.log_density(x))
                .sum();
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

/// `count` diffusion times whose `sqrt(2t)` are log-spaced on `[lo, hi]`.
pub fn noise_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return invalid("noise grid needs 0 < lo < hi and at least two points");
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            let s = (a + (b - a) * i as f64 / (count - 1) as f64).exp();
            0.5 * s * s
        })
        .collect())
}

/// Default grid: 64 values of `sqrt(2t)` on `[0.005, 0.45]`.
pub fn default_noise_grid() -> Vec<f64> {
    noise_grid(0.005, 0.45, 64).expect("valid default grid")
}

/// All fully contained `b x b` windows of an image, stride 1.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    /// One patch per row, pixels in row-major order.
    pub patches: DMatrix<f64>,
    /// Number of windows covering each pixel.
    pub counts: Image,
    side: usize,
}

impl PatchGrid {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.nrows() == 0
    }

    fn windows(&self) -> (usize, usize) {
        (
            self.counts.height() + 1 - self.side,
            self.counts.width() + 1 - self.side,
        )
    }

    /// Adjoint of extraction divided by the counts.
    pub fn scatter(&self, values: &DMatrix<f64>) -> Result<Image> {
        if values.nrows() != self.len() || values.ncols() != self.side * self.side {
            return invalid("patch matrix shape does not match the grid");
        }
        let b = self.side;
        let (nr, nc) = self.windows();
        let (w, h) = (self.counts.width(), self.counts.height());
        let mut out = Image::zeros(w, h);
        let mut seen = vec![0u32; w * h];
        let data = out.data_mut();
        // Running mean: equal contributions come back bit-exact.
        for k in 0..b * b {
            let (dr, dc) = (k / b, k % b);
            let col = values.column(k);
            for r in 0..nr {
                for c in 0..nc {
                    let i = (r + dr) * w + c + dc;
                    seen[i] += 1;
                    data[i] += (col[r * nc + c] - data[i]) / seen[i] as f64;
                }
            }
        }
        Ok(out)
    }

    /// Scatters one scalar per patch (broadcast over its pixels).
    pub fn scatter_scalar(&self, values: &[f64]) -> Result<Image> {
        let a = self.side * self.side;
        let m = DMatrix::from_fn(values.len(), a, |i, _| values[i]);
        self.scatter(&m)
    }
}

pub fn extract_patches(image: &Image, side: usize) -> Result<PatchGrid> {
    let (w, h) = (image.width(), image.height());
    if side == 0 || w < side || h < side {
        return invalid(format!(
            "a {w}x{h} image holds no {side}x{side} patch"
        ));
    }
    let (nr, nc) = (h + 1 - side, w + 1 - side);
    let n = nr * nc;
    let mut patches = DMatrix::zeros(n, side * side);
    for k in 0..side * side {
        let (dr, dc) = (k / side, k % side);
        let mut col = patches.column_mut(k);
        for r in 0..nr {
            for c in 0..nc {
                col[r * nc + c] = image.get(r + dr, c + dc);
            }
        }
    }
    let mut counts = Image::zeros(w, h);
    for r in 0..h {
        let cr = (r + 1).min(side).min(h - r).min(nr) as f64;
        for c in 0..w {
            let cc = (c + 1).min(side).min(w - c).min(nc) as f64;
            counts.set(r, c, cr * cc);
        }
    }
    Ok(PatchGrid {
        patches,
        counts,
        side,
    })
}

/// `sum_j p^-1 P_j^T grad log f(P_j y, t)`.
pub fn epll_score(m: &PatchModel, y: &Image, t: f64) -> Result<Image> {
    check_time(t)?;
    let grid = extract_patches(y, m.side())?;
    grid.scatter(&m.scores(&grid.patches, t))
}

/// One empirical Bayes step with overlapping patch scores averaged.
pub fn epll_eb_denoise(m: &PatchModel, y: &Image, t: f64) -> Result<Image> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(y.clone());
    }
    let s = epll_score(m, y, t)?;
    let mut out = y.clone();
    for (o, g) in out.data_mut().iter_mut().zip(s.data()) {
        *o += 2.0 * t * g;
    }
    Ok(out)
}

/// Per-patch argmax diffusion times for every window of `y`.
pub fn estimate_noise_patches(m: &PatchModel, grid: &PatchGrid, t_grid: &[f64]) -> Result<Vec<f64>> {
    let ng = NoiseGrid::new(m, t_grid)?;
    let resp = &grid.patches * m.filters();
    let n = resp.nrows();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let r: Vec<f64> = resp.row(i).iter().copied().collect();
            t_grid[ng.argmax(&r)]
        })
        .collect())
}

/// Result of blind denoising.
#[derive(Debug, Clone)]
pub struct BlindResult {
    pub denoised: Image,
    /// Per-pixel average of the estimated `sqrt(2 t)` of covering patches.
    pub sigma_map: Image,
    /// Estimated diffusion time per patch, in window raster order.
    pub patch_times: Vec<f64>,
}

/// Estimates a diffusion time per patch, then takes one empirical Bayes
/// step with each patch's own time.
pub fn blind_denoise(m: &PatchModel, y: &Image, t_grid: &[f64]) -> Result<BlindResult> {
    let grid = extract_patches(y, m.side())?;
    let times = estimate_noise_patches(m, &grid, t_grid)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    // Patches sharing a time are scored together.
    let mut steps = DMatrix::zeros(grid.len(), m.dim());
    let mut start = 0;
    while start < order.len() {
        let t = times[order[start]];
        let mut end = start;
        while end < order.len() && times[order[end]] == t {
            end += 1;
        }
        if t > 0.0 {
            let idx = &order[start..end];
            let sub = DMatrix::from_fn(idx.len(), m.dim(), |i, k| grid.patches[(idx[i], k)]);
            let s = m.scores(&sub, t);
            for (i, &row) in idx.iter().enumerate() {
                for k in 0..m.dim() {
                    steps[(row, k)] = 2.0 * t * s[(i, k)];
                }
            }
        }
        start = end;
    }
    let step = grid.scatter(&steps)?;
    let mut denoised = y.clone();
    for (o, g) in denoised.data_mut().iter_mut().zip(step.data()) {
        *o += g;
    }
    let sigmas: Vec<f64> = times.iter().map(|t| (2.0 * t).sqrt()).collect();
    Ok(BlindResult {
        denoised,
        sigma_map: grid.scatter_scalar(&sigmas)?,
        patch_times: times,
    })
}
