//! Denoising score matching with projected AdaBelief.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::experts::GsmExpert;
use crate::image::Image;
use crate::model::{DsmSample, Model, ModelKind};
use crate::patch::PatchModel;
use crate::shearlet::ShearletModel;
use crate::wavelet::{random_crop, WaveletModel};

/// Smallest sampled `sqrt(2t)`; `t = 0` carries no training signal.
pub const MIN_SQRT2T: f64 = 1e-4;
/// Crops drawn for the wavelet mean-grid calibration.
const CALIBRATION_CROPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertKind {
    Gmm,
    Gsm,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::Gmm => "gmm",
            ExpertKind::Gsm => "gsm",
        }
    }
}

impl std::str::FromStr for ExpertKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmm" => Ok(ExpertKind::Gmm),
            "gsm" => Ok(ExpertKind::Gsm),
            other => Err(Error::Config(format!("unknown expert type '{other}' (expected gmm or gsm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub expert: ExpertKind,
    pub steps: usize,
    /// Patches (patch model) or square crops (wavelet, shearlet) per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Element-wise bound on gradient entries before the moment updates.
    pub grad_clip: f64,
    /// Upper end of the uniform `sqrt(2t)` distribution.
    pub sigma_max: f64,
    pub patch_side: usize,
    /// Crop side for the wavelet and shearlet models.
    pub crop_side: usize,
    pub components: usize,
    pub gsm_scales: usize,
    pub wavelet_taps: usize,
    pub wavelet_levels: usize,
    pub shearlet_scales: usize,
    pub seed: u64,
    pub log_every: usize,
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_kind(ModelKind::Patch)
    }
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            expert: ExpertKind::Gmm,
            steps: 100_000,
            batch_size: if kind == ModelKind::Patch { 256 } else { 8 },
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-12,
            grad_clip: 1.0,
            sigma_max: 0.4,
            patch_side: 7,
            crop_side: 64,
            components: 125,
            gsm_scales: 20,
            wavelet_taps: 8,
            wavelet_levels: 3,
            shearlet_scales: 2,
            seed: 0,
            log_every: 100,
            validate_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return bad(format!("sigma_max must be nonnegative, got {}", self.sigma_max));
        }
        if self.sigma_max > 0.0 && self.sigma_max < MIN_SQRT2T {
            return bad(format!("sigma_max must be 0 or at least {MIN_SQRT2T}"));
        }
        if self.components == 0 || self.components.is_multiple_of(2) {
            return bad(format!("L must be odd, got {}", self.components));
        }
        if self.patch_side < 2 {
            return bad("patch_side must be at least 2".into());
        }
        if self.log_every == 0 || self.validate_every == 0 {
            return bad("log_every and validate_every must be positive".into());
        }
        if self.expert == ExpertKind::Gsm && self.kind != ModelKind::Patch {
            return bad("GSM experts are only available for the patch model".into());
        }
        if self.kind == ModelKind::Shearlet && (self.crop_side < 8 || !self.crop_side.is_multiple_of(2)) {
            return bad("shearlet crops must have an even side of at least 8".into());
        }
        if self.kind == ModelKind::Wavelet && !self.crop_side.is_multiple_of(1 << self.wavelet_levels) {
            return bad(format!(
                "wavelet crops must be divisible by 2^levels = {}",
                1usize << self.wavelet_levels
            ));
        }
        Ok(())
    }

    /// Side of the square training samples.
    pub fn sample_side(&self) -> usize {
        match self.kind {
            ModelKind::Patch => self.patch_side,
            _ => self.crop_side,
        }
    }

    /// Fresh model as described by the configuration.
    pub fn init_model(&self) -> Result<Model> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        Ok(match (self.kind, self.expert) {
            (ModelKind::Patch, ExpertKind::Gmm) => {
                Model::Patch(PatchModel::init_gmm(self.patch_side, self.components, &mut rng)?)
            }
            (ModelKind::Patch, ExpertKind::Gsm) => Model::Patch(PatchModel::init_gsm(
                self.patch_side,
                &GsmExpert::default_scales(self.gsm_scales),
                &mut rng,
            )?),
            (ModelKind::Wavelet, _) => Model::Wavelet(WaveletModel::init(
                self.wavelet_taps,
                self.wavelet_levels,
                self.components,
            )?),
            (ModelKind::Shearlet, _) => {
                Model::Shearlet(ShearletModel::init(self.shearlet_scales, self.components)?)
            }
        })
    }

    fn lr_at(&self, step: usize) -> f64 {
        // cosine decay from the base rate towards zero
        let frac = step as f64 / self.steps.max(1) as f64;
        0.5 * self.learning_rate * (1.0 + (PI * frac).cos())
    }
}

/// Training images in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    images: Vec<Image>,
}

impl Corpus {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return invalid("corpus is empty");
        }
        for (i, img) in images.iter().enumerate() {
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return invalid(format!("corpus image {i} has values outside [0, 1]"));
            }
        }
        Ok(Self { images })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn is_image_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["pgm", "png", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
}

/// Every PGM/PNG in `dir`, in lexicographic file-name order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| is_image_file(p));
    paths.sort();
    if paths.is_empty() {
        return invalid(format!("no PGM or PNG images in {}", dir.display()));
    }
    Corpus::new(paths.iter().map(Image::load).collect::<Result<_>>()?)
}

/// Clean samples, their noisy versions, and diffusion times.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clean: Vec<Image>,
    pub noisy: Vec<Image>,
    pub times: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> Vec<DsmSample<'_>> {
        self.clean
            .iter()
            .zip(&self.noisy)
            .zip(&self.times)
            .map(|((x, y), t)| (x, y, *t))
            .collect()
    }
}

/// `cfg.batch_size` crops drawn uniformly over all crop positions of the
/// corpus, each under a random dihedral transform, with `sqrt(2t)` uniform
/// on `(1e-4, sigma_max]` (or `t = 0` when `sigma_max = 0`).
pub fn sample_batch<R: Rng + ?Sized>(corpus: &Corpus, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    let side = cfg.sample_side();
    let positions: Vec<f64> = corpus
        .images
        .iter()
        .map(|img| {
            let (w, h) = (img.width(), img.height());
            if w < side || h < side {
                0.0
            } else {
                ((w - side + 1) * (h - side + 1)) as f64
            }
        })
        .collect();
    let pick = WeightedIndex::new(&positions)
        .map_err(|_| Error::InvalidArgument(format!("no corpus image holds a {side}x{side} crop")))?;
    let mut batch = Batch {
        clean: Vec::with_capacity(cfg.batch_size),
        noisy: Vec::with_capacity(cfg.batch_size),
        times: Vec::with_capacity(cfg.batch_size),
    };
    for _ in 0..cfg.batch_size {
        let img = &corpus.images[pick.sample(rng)];
        let x = random_crop(img, side, rng)?.dihedral(rng.random_range(0..8));
        let s = if cfg.sigma_max > 0.0 {
            // (1e-4, sigma_max]
            cfg.sigma_max - rng.random::<f64>() * (cfg.sigma_max - MIN_SQRT2T)
        } else {
            0.0
        };
        let y = x.add_noise(s, rng);
        batch.clean.push(x);
        batch.noisy.push(y);
        batch.times.push(0.5 * s * s);
    }
    Ok(batch)
}

/// Mean over samples of `|x - y - 2t s(y, t)|^2 / d` for any score.
pub fn dsm_loss_with<F>(samples: &[DsmSample], score: F) -> Result<f64>
where
    F: Fn(&Image, f64) -> Result<Image>,
{
    if samples.is_empty() {
        return invalid("empty batch");
    }
    let mut total = 0.0;
    for (x, y, t) in samples {
        if !x.same_shape(y) {
            return invalid("clean and noisy samples differ in shape");
        }
        let s = score(y, *t)?;
        let err: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .zip(s.data())
            .map(|((x, y), s)| {
                let e = x - y - 2.0 * t * s;
                e * e
            })
            .sum();
        total += err / x.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Denoising-score-matching loss of a model on a batch.
pub fn dsm_loss(model: &Model, samples: &[DsmSample]) -> Result<f64> {
    dsm_loss_with(samples, |y, t| model.score(y, t))
}

/// AdaBelief moments; `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            s: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Mean batch loss since the previous row.
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub state: OptimizerState,
}

/// What the per-step hook sees after each update.
pub struct Progress<'a> {
    pub step: usize,
    pub model: &'a Model,
    pub state: &'a OptimizerState,
    pub row: Option<TraceRow>,
}

/// Trains from scratch without a hook.
pub fn train(model: &mut Model, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, corpus, cfg, None, &mut |_| Ok(()))
}

/// Projected AdaBelief on the DSM loss, resuming from `state` if given. The
/// batch of step `k` is drawn from stream `k` of the seed, so a resumed run
/// reproduces an uninterrupted one.
pub fn train_with(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    state: Option<OptimizerState>,
    hook: &mut dyn FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.kind() != cfg.kind {
        return Err(Error::Config(format!(
            "configuration is for a {} model, got a {} model",
            cfg.kind,
            model.kind()
        )));
    }
    let np = model.n_params();
    let mut state = match state {
        Some(s) if s.m.len() == np && s.s.len() == np => s,
        Some(_) => return invalid("optimizer state does not match the model"),
        None => OptimizerState::new(np),
    };
    if state.step == 0 && cfg.steps > 0 {
        if let Model::Wavelet(m) = model {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX - 1);
            let crops = (0..CALIBRATION_CROPS)
                .map(|_| {
                    let img = &corpus.images[rng.random_range(0..corpus.len())];
                    random_crop(img, cfg.crop_side, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let etas = m.calibrate_etas(&crops)?;
            m.set_etas(&etas)?;
        }
    }

    let start = Instant::now();
    let mut trace = Vec::new();
    let (mut window, mut window_n) = (0.0, 0usize);
    while state.step < cfg.steps {
        let k = state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let batch = sample_batch(corpus, cfg, &mut rng)?;
        let (loss, grad) = model.dsm_batch(&batch.samples())?;
        let lr = cfg.lr_at(k);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(divergence(k, lr, loss, &model.flat_params(), &grad));
        }
        let mut p = model.flat_params();
        adabelief(&mut p, &grad, &mut state, cfg, lr);
        model.set_flat_params_projected(&p)?;
        window += loss;
        window_n += 1;

        let done = state.step;
        if done % cfg.validate_every == 0 {
            model
                .validate()
                .map_err(|e| Error::Numerical(format!("constraint monitor failed after step {done}: {e}")))?;
        }
        let row = (done % cfg.log_every == 0 || done == cfg.steps).then(|| {
            let r = TraceRow {
                step: done,
                loss: window / window_n as f64,
                seconds: start.elapsed().as_secs_f64(),
            };
            (window, window_n) = (0.0, 0);
            r
        });
        if let Some(r) = row {
            trace.push(r);
        }
        hook(&Progress {
            step: done,
            model,
            state: &state,
            row,
        })?;
    }
    Ok(TrainOutcome { trace, state })
}

fn adabelief(p: &mut [f64], g: &[f64], st: &mut OptimizerState, cfg: &TrainConfig, lr: f64) {
    st.step += 1;
    let k = st.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(k);
    let c2 = 1.0 - cfg.beta2.powi(k);
    for i in 0..p.len() {
        // weights of empty mixture components can see huge sensitivities
        let g = g[i].clamp(-cfg.grad_clip, cfg.grad_clip);
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        let d = g - st.m[i];
        st.s[i] = cfg.beta2 * st.s[i] + (1.0 - cfg.beta2) * d * d + cfg.epsilon;
        p[i] -= lr * (st.m[i] / c1) / ((st.s[i] / c2).sqrt() + cfg.epsilon);
    }
}

fn divergence(step: usize, lr: f64, loss: f64, p: &[f64], g: &[f64]) -> Error {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Error::Numerical(format!(
        "non-finite training loss at step {step}: loss {loss}, lr {lr:.3e}, |params| {:.6e}, |grad| {:.6e}",
        norm(p),
        norm(g)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand_distr::StandardNormal;

    fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn tiny_corpus() -> Corpus {
        Corpus::new(synth::corpus(3, 24, 1).unwrap()).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 6,
            batch_size: 16,
            components: 9,
            patch_side: 3,
            log_every: 2,
            validate_every: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_leave_the_model_unchanged() {
        let cfg = TrainConfig { steps: 0, ..tiny_cfg() };
        let mut m = cfg.init_model().unwrap();
        let before = m.clone();
        let out = train(&mut m, &tiny_corpus(), &cfg).unwrap();
        assert_eq!(m, before);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let cfg = tiny_cfg();
        let corpus = tiny_corpus();
        let mut a = cfg.init_model().unwrap();
        let out = train(&mut a, &corpus, &cfg).unwrap();
        let mut b = cfg.init_model().unwrap();
        train(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(out.trace.iter().map(|r| r.step).collect::<Vec<_>>(), vec![2, 4, 6]);

        // snapshot after 3 steps, then resume from the snapshot
        let mut d = cfg.init_model().unwrap();
        let mut st_full = None;
        train_with(&mut d, &corpus, &cfg, None, &mut |p| {
            if p.step == 3 {
                st_full = Some((p.model.clone(), p.state.clone()));
            }
            Ok(())
        })
        .unwrap();
        let (mut mid, st3) = st_full.unwrap();
        assert_eq!(st3.step, 3);
        train_with(&mut mid, &corpus, &cfg, Some(st3), &mut |_| Ok(())).unwrap();
        assert_eq!(mid, a);
    }

    #[test]
    fn constraints_hold_after_training() {
        let cfg = tiny_cfg();
        let mut m = cfg.init_model().unwrap();
        train_with(&mut m, &tiny_corpus(), &cfg, None, &mut |p| p.model.validate()).unwrap();
    }

    #[test]
    fn zero_sigma_gives_clean_pairs() {
        let cfg = TrainConfig { sigma_max: 0.0, ..tiny_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&tiny_corpus(), &cfg, &mut rng).unwrap();
        assert_eq!(b.clean, b.noisy);
        assert!(b.times.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn sampled_noise_levels_are_uniform() {
        let cfg = TrainConfig { batch_size: 1_000_000, patch_side: 2, ..tiny_cfg() };
        let corpus = Corpus::new(vec![Image::filled(2, 2, 0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_batch(&corpus, &cfg, &mut rng).unwrap();
        let s: Vec<f64> = b.times.iter().map(|t| (2.0 * t).sqrt()).collect();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        // uniform on (1e-4, 0.4]: mean (0.4 + 1e-4) / 2, std (0.4 - 1e-4) / sqrt(12)
        let ci = 3.0 * (0.4 - 1e-4) / 12f64.sqrt() / 1000.0;
        assert!((mean - 0.200_05).abs() < ci, "{mean}");
        assert!((mean - 0.2).abs() < ci);
        assert!(s.iter().all(|&v| v > MIN_SQRT2T && v <= 0.4));
    }

    #[test]
    fn batches_are_reproducible() {
        let cfg = tiny_cfg();
        let corpus = tiny_corpus();
        let draw = || sample_batch(&corpus, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(draw(), draw());
    }

    #[test]
    fn zero_score_loss_is_the_noise_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: f64 = 0.01;
        let pairs: Vec<(Image, Image)> = (0..2000)
            .map(|_| {
                let x = Image::from_vec(4, 4, normals(16, &mut rng)).unwrap();
                let y = x.add_noise((2.0 * t).sqrt(), &mut rng);
                (x, y)
            })
            .collect();
        let samples: Vec<DsmSample> = pairs.iter().map(|(x, y)| (x, y, t)).collect();
        let loss = dsm_loss_with(&samples, |y, _| Ok(Image::zeros(y.width(), y.height()))).unwrap();
        // per-element mean of chi-square(32000) * 2t / 32000
        let ci = 3.0 * 2.0 * t * (2.0 / 32000.0f64).sqrt();
        assert!((loss - 2.0 * t).abs() < ci, "{loss}");
    }

    #[test]
    fn single_atom_oracle_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Image::from_vec(3, 3, normals(9, &mut rng)).unwrap();
        let t = 0.02;
        let ys: Vec<Image> = (0..5).map(|_| x.add_noise(0.2, &mut rng)).collect();
        let samples: Vec<DsmSample> = ys.iter().map(|y| (&x, y, t)).collect();
        // exact score of a Dirac at x smoothed by 2t
        let loss = dsm_loss_with(&samples, |y, t| {
            Image::from_vec(3, 3, x.data().iter().zip(y.data()).map(|(a, b)| (a - b) / (2.0 * t)).collect())
        })
        .unwrap();
        assert!(loss < 1e-24);
    }

    #[test]
    fn model_loss_matches_the_gradient_path() {
        let cfg = tiny_cfg();
        let m = cfg.init_model().unwrap();
        let b = sample_batch(&tiny_corpus(), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let l1 = dsm_loss(&m, &b.samples()).unwrap();
        let (l2, _) = m.dsm_batch(&b.samples()).unwrap();
        assert!((l1 - l2).abs() < 1e-12 * l1.max(1.0), "{l1} vs {l2}");
        assert!(l1 >= 0.0);
    }

    #[test]
    fn config_rejects_even_components() {
        let cfg = TrainConfig { components: 4, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_loading_is_sorted_and_rejects_empty_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path()).is_err());
        synth::write_corpus(dir.path(), 3, 16, 2).unwrap();
        let a = load_corpus(dir.path()).unwrap();
        let b = load_corpus(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let expect = synth::corpus(3, 16, 2).unwrap();
        assert_eq!(a.images()[1].to_u8(), expect[1].to_u8());
    }

    #[test]
    fn wavelet_training_runs() {
        let cfg = TrainConfig {
            crop_side: 16,
            batch_size: 2,
            wavelet_taps: 4,
            wavelet_levels: 2,
            ..TrainConfig { kind: ModelKind::Wavelet, ..tiny_cfg() }
        };
        let mut m = cfg.init_model().unwrap();
        let out = train(&mut m, &tiny_corpus(), &cfg).unwrap();
        assert!(out.trace.iter().all(|r| r.loss.is_finite()));
        m.validate().unwrap();
    }

    #[test]
    fn shearlet_training_runs() {
        let cfg = TrainConfig {
            crop_side: 16,
            batch_size: 2,
            steps: 2,
            shearlet_scales: 1,
            ..TrainConfig { kind: ModelKind::Shearlet, ..tiny_cfg() }
        };
        let mut m = cfg.init_model().unwrap();
        let out = train(&mut m, &tiny_corpus(), &cfg).unwrap();
        assert!(out.trace.iter().all(|r| r.loss.is_finite()));
    }
}
