//! One-dimensional experts whose diffusion is a variance update.
//!
//! A [`GmmExpert`] is a symmetric Gaussian mixture with fixed equidistant
//! means on `[-eta, eta]` and one shared variance
//! `sigma^2(t) = sigma0^2 + 2 t c`. A [`GsmExpert`] is a zero-mean scale
//! mixture with per-scale variances `z_i^2 + 2 t c`. [`DiracMixture`] is the
//! exactly diffusable toy density used as a test oracle.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::mathkit::project_simplex;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric Gaussian-mixture expert with fixed equidistant means.
///
/// Only the first `ceil(L/2)` weights are stored; the full weight vector is
/// their mirror image, so the density is even in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmExpert {
    half_weights: Vec<f64>,
    components: usize,
    eta: f64,
    sigma0: f64,
    rate: f64,
}

impl GmmExpert {
    /// Uniform weights, `sigma0 = 2 eta / (L - 1)`.
    pub fn new(components: usize, eta: f64, rate: f64) -> Result<Self> {
        if components < 2 {
            return invalid("a mean grid needs at least two components");
        }
        let sigma0 = 2.0 * eta / (components - 1) as f64;
        let half = vec![1.0; components.div_ceil(2)];
        let mut e = Self::with_sigma0(components, eta, sigma0, rate, half)?;
        e.set_half_weights(&vec![1.0 / components as f64; components.div_ceil(2)])?;
        Ok(e)
    }

    /// Explicit `sigma0` and half weights (projected onto the mirrored simplex).
    pub fn with_sigma0(
        components: usize,
        eta: f64,
        sigma0: f64,
        rate: f64,
        half_weights: Vec<f64>,
    ) -> Result<Self> {
        if components == 0 {
            return invalid("expert needs at least one component");
        }
        if !(eta >= 0.0 && eta.is_finite()) || (components > 1 && eta <= 0.0) {
            return invalid(format!("mean grid half-width must be positive, got {eta}"));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return invalid(format!("sigma0 must be positive, got {sigma0}"));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return invalid(format!("diffusion rate must be nonnegative, got {rate}"));
        }
        if half_weights.len() != components.div_ceil(2) {
            return invalid(format!(
                "expected {} half weights for {components} components, got {}",
                components.div_ceil(2),
                half_weights.len()
            ));
        }
        let mut e = Self {
            half_weights: vec![0.0; half_weights.len()],
            components,
            eta,
            sigma0,
            rate,
        };
        e.set_half_weights(&half_weights)?;
        Ok(e)
    }

    /// Stored half weights taken as they are; they must already lie on the
    /// mirrored simplex (within `1e-9`).
    pub fn from_stored(components: usize, eta: f64, sigma0: f64, half: Vec<f64>) -> Result<Self> {
        let mut e = Self::with_sigma0(components, eta, sigma0, 1.0, half.clone())?;
        check_simplex(&mirror(&half, components))?;
        e.half_weights = half;
        Ok(e)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.rate = rate;
    }

    pub fn half_weights(&self) -> &[f64] {
        &self.half_weights
    }

    /// Rescales the mean grid, keeping `sigma0 = 2 eta / (L - 1)`.
    pub fn set_eta(&mut self, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta.is_finite()) {
            return invalid(format!("mean grid half-width must be positive, got {eta}"));
        }
        self.eta = eta;
        if self.components > 1 {
            self.sigma0 = 2.0 * eta / (self.components - 1) as f64;
        }
        Ok(())
    }

    /// Mirrors `half` to full length, projects onto the simplex, and keeps
    /// the leading half.
    pub fn set_half_weights(&mut self, half: &[f64]) -> Result<()> {
        if half.len() != self.half_weights.len() {
            return invalid("half-weight length mismatch");
        }
        let full = mirror(half, self.components);
        let projected = project_simplex(&full)?;
        self.half_weights.copy_from_slice(&projected[..half.len()]);
        Ok(())
    }

    /// Full length-`L` weights on the simplex.
    pub fn weights(&self) -> Vec<f64> {
        mirror(&self.half_weights, self.components)
    }

    pub fn means(&self) -> Vec<f64> {
        if self.components == 1 {
            return vec![0.0];
        }
        let l = self.components;
        let step = 2.0 * self.eta / (l - 1) as f64;
        let mut means = vec![0.0; l];
        for i in 0..l / 2 {
            means[i] = -self.eta + step * i as f64;
            means[l - 1 - i] = -means[i];
        }
        means
    }

    /// `sigma0^2 + 2 t c`.
    pub fn variance(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return invalid(format!("diffusion time must be nonnegative, got {t}"));
        }
        Ok(self.variance_unchecked(t))
    }

    fn variance_unchecked(&self, t: f64) -> f64 {
        self.sigma0 * self.sigma0 + 2.0 * t * self.rate
    }

    /// Adds `d/dw_full` into the half-weight gradient (mirrored pairs sum).
    pub fn fold_weight_gradient(&self, full: &[f64], half: &mut [f64]) {
        for (h, g) in half.iter_mut().zip(fold_half(full, self.half_weights.len())) {
            *h += g;
        }
    }
}

/// Sums `f(l)` over mirrored pairs `(l, n-1-l)` so that reflecting the
/// input permutes addends inside a pair only.
fn pair_sum(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for l in 0..n / 2 {
        acc += f(l) + f(n - 1 - l);
    }
    if n % 2 == 1 {
        acc += f(n / 2);
    }
    acc
}

fn check_simplex(w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Degenerate(format!(
            "mixture weights are not on the simplex (sum {sum})"
        )));
    }
    Ok(())
}

fn mirror(half: &[f64], components: usize) -> Vec<f64> {
    let mut full = Vec::with_capacity(components);
    full.extend_from_slice(half);
    let tail = components - half.len();
    full.extend(half[..tail].iter().rev());
    full
}

/// Gaussian scale mixture `sum_i w_i N(0, z_i^2 + 2 t c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsmExpert {
    weights: Vec<f64>,
    scales: Vec<f64>,
    rate: f64,
}

impl GsmExpert {
    /// Geometric scale grid `z_i = 0.01 * 1.4^(i-1)`, `i = 1..=count`.
    pub fn default_scales(count: usize) -> Vec<f64> {
        (0..count).map(|i| 0.01 * 1.4f64.powi(i as i32)).collect()
    }

    pub fn new(scales: Vec<f64>, weights: Vec<f64>, rate: f64) -> Result<Self> {
        if scales.is_empty() || scales.len() != weights.len() {
            return invalid("scale and weight vectors must be non-empty and equally long");
        }
        if scales.iter().any(|&z| !(z > 0.0 && z.is_finite())) {
            return invalid("GSM scales must be positive");
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("GSM scales must be strictly increasing");
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return invalid(format!("diffusion rate must be nonnegative, got {rate}"));
        }
        Ok(Self {
            weights: project_simplex(&weights)?,
            scales,
            rate,
        })
    }

    /// Stored weights taken as they are; they must lie on the simplex.
    pub fn from_stored(scales: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(scales, weights.clone(), 1.0)?;
        check_simplex(&weights)?;
        e.weights = weights;
        Ok(e)
    }

    pub fn uniform(scales: Vec<f64>, rate: f64) -> Result<Self> {
        let n = scales.len();
        Self::new(scales, vec![1.0 / n as f64; n], rate)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.rate = rate;
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.weights.len() {
            return invalid("GSM weight length mismatch");
        }
        self.weights = project_simplex(w)?;
        Ok(())
    }

    /// Per-scale variances `z_i^2 + 2 t c`.
    pub fn variances(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return invalid(format!("diffusion time must be nonnegative, got {t}"));
        }
        Ok(self
            .scales
            .iter()
            .map(|z| z * z + 2.0 * t * self.rate)
            .collect())
    }
}

/// Value and derivatives of one expert at one point.
#[derive(Debug, Clone, Default)]
pub struct ExpertEval {
    pub log_density: f64,
    /// `d/dx log psi`.
    pub score: f64,
    /// `d score / dx`.
    pub dscore_dx: f64,
    /// `d score / dc` (through every component variance).
    pub dscore_drate: f64,
    /// `d log psi / dw` over the stored parameters.
    pub dlog_dparams: Vec<f64>,
    /// `d score / dw` over the stored parameters.
    pub dscore_dparams: Vec<f64>,
}

/// Either expert family.
#[derive(Debug, Clone, PartialEq)]
pub enum Expert {
    Gmm(GmmExpert),
    Gsm(GsmExpert),
}

impl Expert {
    pub fn rate(&self) -> f64 {
        match self {
            Expert::Gmm(e) => e.rate,
            Expert::Gsm(e) => e.rate,
        }
    }

    pub fn set_rate(&mut self, rate: f64) {
        match self {
            Expert::Gmm(e) => e.rate = rate,
            Expert::Gsm(e) => e.rate = rate,
        }
    }

    /// Learnable weights as stored (half weights for GMM, all for GSM).
    pub fn params(&self) -> &[f64] {
        match self {
            Expert::Gmm(e) => &e.half_weights,
            Expert::Gsm(e) => &e.weights,
        }
    }

    /// Sets the weights, projecting onto the (mirrored) simplex.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        match self {
            Expert::Gmm(e) => e.set_half_weights(p),
            Expert::Gsm(e) => e.set_weights(p),
        }
    }

    /// Overwrites the stored weights without projecting; derivative checks
    /// use this to leave the simplex.
    pub(crate) fn set_params_raw(&mut self, p: &[f64]) {
        match self {
            Expert::Gmm(e) => e.half_weights.copy_from_slice(p),
            Expert::Gsm(e) => e.weights.copy_from_slice(p),
        }
    }

    /// Variance of the narrowest component at `t = 0`.
    pub fn base_variance(&self) -> f64 {
        match self {
            Expert::Gmm(e) => e.sigma0 * e.sigma0,
            Expert::Gsm(e) => e.scales[0] * e.scales[0],
        }
    }

    /// Freezes the expert at diffusion time `t` for repeated evaluation.
    pub fn prepare(&self, t: f64) -> Prepared {
        let (w, mu, var, half) = match self {
            Expert::Gmm(e) => {
                let s = e.variance_unchecked(t);
                (e.weights(), e.means(), vec![s; e.components], Some(e.half_weights.len()))
            }
            Expert::Gsm(e) => (
                e.weights.clone(),
                vec![0.0; e.weights.len()],
                e.scales.iter().map(|z| z * z + 2.0 * t * e.rate).collect(),
                None,
            ),
        };
        let half_inv_var = var.iter().map(|s| 0.5 / s).collect();
        let lognorm: Vec<f64> = match self {
            Expert::Gmm(_) => vec![-0.5 * (LN_2PI + var[0].ln()); var.len()],
            Expert::Gsm(_) => var.iter().map(|s| -0.5 * (LN_2PI + s.ln())).collect(),
        };
        let grid = match self {
            Expert::Gmm(e) => Grid::new(e, var[0]),
            Expert::Gsm(_) => None,
        };
        Prepared {
            w,
            mu,
            var,
            half_inv_var,
            lognorm,
            logc: OnceLock::new(),
            half,
            t,
            grid,
        }
    }

    pub fn log_density(&self, x: f64, t: f64) -> f64 {
        self.prepare(t).log_score(x).0
    }

    pub fn score(&self, x: f64, t: f64) -> f64 {
        self.prepare(t).log_score(x).1
    }

    /// `(log psi, d/dx log psi)`.
    pub fn eval_basic(&self, x: f64, t: f64) -> (f64, f64) {
        self.prepare(t).log_score(x)
    }

    /// Empirical Bayes step on one coefficient: `y + 2 t c * score(y, t)`.
    pub fn shrink(&self, y: f64, t: f64) -> f64 {
        y + 2.0 * t * self.rate() * self.score(y, t)
    }

    /// Draws a component by weight, then a Gaussian sample from it.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        self.prepare(t).sample(rng)
    }

    /// Value, score, and the derivatives needed for training.
    pub fn eval(&self, x: f64, t: f64, with_params: bool) -> ExpertEval {
        self.prepare(t).eval(x, with_params)
    }

    /// Number of stored learnable weights.
    pub fn n_params(&self) -> usize {
        self.params().len()
    }
}

/// An expert frozen at one diffusion time.
#[derive(Debug, Clone)]
pub struct Prepared {
    w: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
    half_inv_var: Vec<f64>,
    lognorm: Vec<f64>,
    /// `log w_l + lognorm_l`, built on first use by the log-sum-exp path.
    logc: OnceLock<Vec<f64>>,
    half: Option<usize>,
    t: f64,
    grid: Option<Grid>,
}

/// Shared-variance Gaussians on a uniform mean grid. Relative to the mean
/// `l*` nearest to `x`, component `l* + k` is `r^k q_k` times component
/// `l*`, with `r = exp(delta d / s)`, `q_k = exp(-k^2 delta^2 / 2s)` and
/// `d = x - mu_l*`, which replaces one exponential per component by a
/// product.
#[derive(Debug, Clone)]
struct Grid {
    mu0: f64,
    delta: f64,
    var: f64,
    q: Vec<f64>,
}

/// Below this the recurrence has lost the mass; fall back to log-sum-exp.
const GRID_MIN_SUM: f64 = 1e-200;
/// Cap on `log(N_l / psi)`. The ratio only gets this large for a component
/// with zero weight sitting where the mixture has almost no mass; capping
/// keeps weight sensitivities finite (about `1e200`) there.
const MAX_LOG_RATIO: f64 = 460.0;

impl Grid {
    fn new(e: &GmmExpert, var: f64) -> Option<Self> {
        let l = e.components;
        if l < 2 {
            return None;
        }
        let delta = 2.0 * e.eta / (l - 1) as f64;
        // keeps r^k within range for |d| <= delta
        if !(var > 0.0) || l as f64 * delta * delta / var > 1000.0 {
            return None;
        }
        // q_{k+1} = q_k rho^(2k+1) with rho = exp(-delta^2 / 2s)
        let rho = (-delta * delta / (2.0 * var)).exp();
        let rho2 = rho * rho;
        let mut q = vec![0.0; l];
        let (mut qk, mut c) = (1.0, rho);
        for v in q.iter_mut() {
            *v = qk;
            qk *= c;
            c *= rho2;
            if qk < TINY {
                break;
            }
        }
        Some(Self {
            mu0: -e.eta,
            delta,
            var,
            q,
        })
    }

    /// Fills `out` with `u_l = N_l / N_l*` and returns `d = x - mu_l*`, or
    /// `None` when the recurrence could overflow. Beyond either end of the
    /// grid every ratio is below one, so those points are accepted too.
    fn ratios(&self, x: f64, out: &mut [f64]) -> Option<f64> {
        let l = out.len();
        let pos = ((x - self.mu0) / self.delta).round();
        let ls = pos.clamp(0.0, (l - 1) as f64) as usize;
        let d = x - (self.mu0 + ls as f64 * self.delta);
        let outside = (ls == l - 1 && d > 0.0) || (ls == 0 && d < 0.0);
        if !(d.abs() <= self.delta || outside) {
            return None;
        }
        let r = (self.delta * d / self.var).exp();
        let rinv = (-self.delta * d / self.var).exp();
        out[ls] = 1.0;
        fill_geometric(&mut out[ls + 1..], r, &self.q);
        fill_geometric_rev(&mut out[..ls], rinv, &self.q);
        Some(d)
    }
}

/// Below this a term is dropped, and once terms only shrink the rest are
/// zeroed.
const TINY: f64 = 1e-300;

/// `out[k] = r^(k+1) q[k+1]`; the sequence is log-concave in `k`.
fn fill_geometric(out: &mut [f64], r: f64, q: &[f64]) {
    let mut p = 1.0;
    let mut prev = 1.0;
    for k in 0..out.len() {
        p *= r;
        let v = p * q[k + 1];
        out[k] = v;
        if v < TINY && v <= prev {
            out[k + 1..].iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        prev = v;
    }
}

fn fill_geometric_rev(out: &mut [f64], r: f64, q: &[f64]) {
    let n = out.len();
    let mut p = 1.0;
    let mut prev = 1.0;
    for k in 0..n {
        p *= r;
        let v = p * q[k + 1];
        out[n - 1 - k] = v;
        if v < TINY && v <= prev {
            out[..n - 1 - k].iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        prev = v;
    }
}

impl Prepared {
    fn logc(&self) -> &[f64] {
        self.logc.get_or_init(|| {
            self.w
                .iter()
                .zip(&self.lognorm)
                .map(|(&w, &ln)| if w > 0.0 { w.ln() + ln } else { f64::NEG_INFINITY })
                .collect()
        })
    }

    #[inline]
    fn term(&self, l: usize, x: f64) -> f64 {
        let d = x - self.mu[l];
        self.logc()[l] - d * d * self.half_inv_var[l]
    }

    /// `(log psi, d/dx log psi)`.
    pub fn log_score(&self, x: f64) -> (f64, f64) {
        if self.half.is_some() {
            // even density: evaluate at |x| so that symmetry is exact
            let (l, sc) = self.log_score_direct(x.abs());
            return (l, if x < 0.0 { -sc } else if x == 0.0 { 0.0 } else { sc });
        }
        self.log_score_direct(x)
    }

    fn log_score_direct(&self, x: f64) -> (f64, f64) {
        if let Some(g) = &self.grid {
            let mut u = vec![0.0; self.w.len()];
            if let Some(d) = g.ratios(x, &mut u) {
                let (mut sum, mut num) = (0.0, 0.0);
                for l in 0..u.len() {
                    let e = self.w[l] * u[l];
                    sum += e;
                    num += e * (self.mu[l] - x);
                }
                if sum > GRID_MIN_SUM {
                    let log_psi = self.lognorm[0] - d * d / (2.0 * g.var) + sum.ln();
                    return (log_psi, num / (sum * g.var));
                }
            }
        }
        self.log_score_lse(x)
    }

    /// Overflow-safe log-sum-exp evaluation.
    fn log_score_lse(&self, x: f64) -> (f64, f64) {
        let n = self.w.len();
        let mut max = f64::NEG_INFINITY;
        for l in 0..n {
            max = max.max(self.term(l, x));
        }
        let term = |l: usize| {
            let e = (self.term(l, x) - max).exp();
            (e, e * (self.mu[l] - x) * 2.0 * self.half_inv_var[l])
        };
        let (mut sum, mut num) = (0.0, 0.0);
        for l in 0..n / 2 {
            let (e1, a1) = term(l);
            let (e2, a2) = term(n - 1 - l);
            sum += e1 + e2;
            num += a1 + a2;
        }
        if n % 2 == 1 {
            let (e, a) = term(n / 2);
            sum += e;
            num += a;
        }
        (max + sum.ln(), num / sum)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.log_score(x).0
    }

    pub fn score(&self, x: f64) -> f64 {
        self.log_score(x).1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let n = self.w.len();
        let mut acc = 0.0;
        let mut pick = n - 1;
        for l in 0..n {
            acc += self.w[l];
            if u < acc {
                pick = l;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.mu[pick] + self.var[pick].sqrt() * z
    }

    pub fn eval(&self, x: f64, with_params: bool) -> ExpertEval {
        if self.half.is_none() || x > 0.0 {
            return self.eval_direct(x, with_params);
        }
        // even density: odd quantities flip sign under x -> -x
        let mut e = self.eval_direct(-x, with_params);
        let flip = |v: &mut f64| *v = if x == 0.0 { 0.0 } else { -*v };
        flip(&mut e.score);
        flip(&mut e.dscore_drate);
        e.dscore_dparams.iter_mut().for_each(flip);
        e
    }

    /// `log psi`, responsibilities `w_l N_l / psi` and ratios `N_l / psi`
    /// by log-sum-exp.
    fn responsibilities(&self, x: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.w.len();
        let mut max = f64::NEG_INFINITY;
        for l in 0..n {
            max = max.max(self.term(l, x));
        }
        let sum = pair_sum(n, |l| (self.term(l, x) - max).exp());
        let log_psi = max + sum.ln();
        let resp = (0..n).map(|l| (self.term(l, x) - log_psi).exp()).collect();
        let ratio = (0..n)
            .map(|l| {
                let d = x - self.mu[l];
                (self.lognorm[l] - d * d * self.half_inv_var[l] - log_psi).min(MAX_LOG_RATIO).exp()
            })
            .collect();
        (log_psi, resp, ratio)
    }

    /// Moment form for one shared variance on the mean grid.
    fn eval_grid(&self, g: &Grid, x: f64, with_params: bool) -> Option<ExpertEval> {
        let n = self.w.len();
        let mut u = vec![0.0; n];
        let d = g.ratios(x, &mut u)?;
        let s = g.var;
        let inv_s = 1.0 / s;
        let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for l in 0..n {
            let e = self.w[l] * u[l];
            if e == 0.0 {
                continue;
            }
            let a = (self.mu[l] - x) * inv_s;
            s0 += e;
            s1 += e * a;
            s2 += e * a * a;
            s3 += e * a * a * a;
        }
        if !(s0 > GRID_MIN_SUM) {
            return None;
        }
        let inv = 1.0 / s0;
        let (m1, m2, m3) = (s1 * inv, s2 * inv, s3 * inv);
        let mut out = ExpertEval {
            log_density: self.lognorm[0] - d * d * 0.5 * inv_s + s0.ln(),
            score: m1,
            dscore_dx: -inv_s + m2 - m1 * m1,
            dscore_drate: 2.0 * self.t * (0.5 * (m3 - m1 * m2) - m1 * inv_s),
            dlog_dparams: Vec::new(),
            dscore_dparams: Vec::new(),
        };
        if with_params {
            let np = self.half.unwrap_or(n);
            let (mut dl, mut ds) = (vec![0.0; np], vec![0.0; np]);
            for l in 0..n {
                let ratio = u[l] * inv;
                if ratio == 0.0 {
                    continue;
                }
                let a = (self.mu[l] - x) * inv_s;
                let i = match self.half {
                    Some(h) if l >= h => n - 1 - l,
                    _ => l,
                };
                dl[i] += ratio;
                ds[i] += ratio * (a - m1);
            }
            out.dlog_dparams = dl;
            out.dscore_dparams = ds;
        }
        Some(out)
    }

    fn eval_direct(&self, x: f64, with_params: bool) -> ExpertEval {
        if let Some(g) = &self.grid {
            if let Some(e) = self.eval_grid(g, x, with_params) {
                return e;
            }
        }
        let n = self.w.len();
        let (log_psi, resp, ratio) = self.responsibilities(x);
        let aa: Vec<f64> = (0..n).map(|l| (self.mu[l] - x) / self.var[l]).collect();
        let score = pair_sum(n, |l| resp[l] * aa[l]);
        let m2 = pair_sum(n, |l| resp[l] * aa[l] * aa[l]);
        let inv_s = pair_sum(n, |l| resp[l] / self.var[l]);
        let dscore_dx = -inv_s + m2 - score * score;
        let dscore_dvar_sum = pair_sum(n, |l| {
            let s = self.var[l];
            let a = aa[l];
            let beta = -0.5 / s + 0.5 * a * a;
            resp[l] * (beta * (a - score) - a / s)
        });
        let dscore_drate = 2.0 * self.t * dscore_dvar_sum;

        let (mut dlog, mut dscore) = (Vec::new(), Vec::new());
        if with_params {
            let full_score: Vec<f64> = (0..n).map(|l| ratio[l] * (aa[l] - score)).collect();
            match self.half {
                Some(h) => {
                    dlog = fold_half(&ratio, h);
                    dscore = fold_half(&full_score, h);
                }
                None => {
                    dlog = ratio;
                    dscore = full_score;
                }
            }
        }
        ExpertEval {
            log_density: log_psi,
            score,
            dscore_dx,
            dscore_drate,
            dlog_dparams: dlog,
            dscore_dparams: dscore,
        }
    }
}

fn fold_half(full: &[f64], half: usize) -> Vec<f64> {
    let l = full.len();
    let mut out = vec![0.0; half];
    for (i, g) in full.iter().enumerate() {
        out[if i < half { i } else { l - 1 - i }] += g;
    }
    out
}

/// Weighted Dirac measures diffused exactly: `sum_i w_i N(x_i, 2 t I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMixture {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiracMixture {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return invalid("need one weight per atom");
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d || a.iter().any(|v| !v.is_finite())) {
            return invalid("atoms must be finite points of equal dimension");
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return invalid("atom weights must lie on the simplex");
        }
        Ok(Self { atoms, weights })
    }

    /// The six-atom planar configuration used to illustrate diffusion.
    pub fn planar_example() -> Self {
        let atoms = [
            [0.588, 0.966],
            [0.289, 0.112],
            [-0.313, -0.924],
            [-0.696, 0.990],
            [-0.906, 0.030],
            [-0.516, 0.039],
        ];
        Self {
            atoms: atoms.iter().map(|a| a.to_vec()).collect(),
            weights: vec![0.23, 0.1, 0.09, 0.19, 0.29, 0.08],
        }
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// Exact `(log f_t(y), grad log f_t(y))`.
    pub fn log_density_score(&self, y: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        if !(t > 0.0) {
            return invalid("the diffused Dirac mixture needs t > 0");
        }
        if y.len() != self.dim() {
            return invalid("dimension mismatch");
        }
        let d = self.dim() as f64;
        let var = 2.0 * t;
        let logs: Vec<f64> = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| {
                let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * d * (2.0 * PI * var).ln() - dist2 / (2.0 * var)
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let log_f = max + sum.ln();
        let mut grad = vec![0.0; y.len()];
        for (x, l) in self.atoms.iter().zip(&logs) {
            let r = (l - log_f).exp();
            for k in 0..y.len() {
                grad[k] += r * (x[k] - y[k]) / var;
            }
        }
        Ok((log_f, grad))
    }

    /// `(f_t(y), grad log f_t(y))`.
    pub fn density_score(&self, y: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.log_density_score(y, t)?;
        Ok((l.exp(), g))
    }

    /// Empirical Bayes estimate `y + 2 t grad log f_t(y)`.
    pub fn eb_estimate(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let (_, g) = self.log_density_score(y, t)?;
        Ok(y.iter().zip(&g).map(|(v, s)| v + 2.0 * t * s).collect())
    }
}
