//! The three priors behind one interface.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::experts::Expert;
use crate::image::Image;
use crate::patch::{epll_score, PatchModel};
use crate::shearlet::ShearletModel;
use crate::wavelet::WaveletModel;

/// One training pair: clean image, noisy image, diffusion time.
pub type DsmSample<'a> = (&'a Image, &'a Image, f64);

/// Batches are cut into this many chunks whatever the thread count, and
/// chunk sums are added in order, so results do not depend on scheduling.
const CHUNKS: usize = 16;

/// Sums `f(sample, grad)` over a batch into a fresh gradient of length `np`.
pub(crate) fn chunked_sum<F>(batch: &[DsmSample], np: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(&DsmSample, &mut [f64]) -> f64 + Sync,
{
    let chunk = batch.len().div_ceil(CHUNKS).max(1);
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(chunk)
        .map(|c| {
            let mut g = vec![0.0; np];
            let loss = c.iter().map(|s| f(s, &mut g)).sum::<f64>();
            (loss, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; np];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Patch,
    Wavelet,
    Shearlet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Patch => "patch",
            ModelKind::Wavelet => "wavelet",
            ModelKind::Shearlet => "shearlet",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patch" => Ok(ModelKind::Patch),
            "wavelet" => Ok(ModelKind::Wavelet),
            "shearlet" => Ok(ModelKind::Shearlet),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected patch, wavelet or shearlet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Patch(PatchModel),
    Wavelet(WaveletModel),
    Shearlet(ShearletModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Patch(_) => ModelKind::Patch,
            Model::Wavelet(_) => ModelKind::Wavelet,
            Model::Shearlet(_) => ModelKind::Shearlet,
        }
    }

    pub fn experts(&self) -> &[Expert] {
        match self {
            Model::Patch(m) => m.experts(),
            Model::Wavelet(m) => m.experts(),
            Model::Shearlet(m) => m.experts(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Patch(m) => m.n_params(),
            Model::Wavelet(m) => m.n_params(),
            Model::Shearlet(m) => m.n_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Patch(m) => m.validate(),
            Model::Wavelet(m) => m.validate(),
            Model::Shearlet(m) => m.params().validate(),
        }
    }

    /// Whole-image score: averaged patch scores for the patch model, the
    /// global transform score otherwise.
    pub fn score(&self, y: &Image, t: f64) -> Result<Image> {
        match self {
            Model::Patch(m) => epll_score(m, y, t),
            Model::Wavelet(m) => m.score(y, t),
            Model::Shearlet(m) => m.score(y, t),
        }
    }

    /// Flat parameter vector used by the optimizer.
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Model::Patch(m) => m.flat_params(),
            Model::Wavelet(m) => m.params(),
            Model::Shearlet(m) => m.flat_params(),
        }
    }

    /// Writes a flat parameter vector back, projecting every block onto its
    /// constraint set.
    pub fn set_flat_params_projected(&mut self, p: &[f64]) -> Result<()> {
        match self {
            Model::Patch(m) => m.set_flat_params_projected(p),
            Model::Wavelet(m) => m.set_params_projected(p),
            Model::Shearlet(m) => m.set_flat_params_projected(p),
        }
    }

    /// Mean denoising-score-matching loss of a batch and its gradient. Patch
    /// models take `b x b` pairs, the others square crops of one common side.
    pub fn dsm_batch(&self, batch: &[DsmSample]) -> Result<(f64, Vec<f64>)> {
        match self {
            Model::Patch(m) => m.dsm_batch(batch),
            Model::Shearlet(m) => m.dsm_batch(batch),
            Model::Wavelet(m) => {
                if batch.is_empty() {
                    return invalid("empty batch");
                }
                for (x, y, t) in batch {
                    if !x.same_shape(y) {
                        return invalid("clean and noisy crops differ in shape");
                    }
                    m.score(x, 0.0)?;
                    if !(*t >= 0.0 && t.is_finite()) {
                        return invalid(format!("training times must be nonnegative, got {t}"));
                    }
                }
                let (loss, mut grad) = chunked_sum(batch, m.n_params(), |(x, y, t), g| {
                    let prep = m.prepare(*t);
                    let (l, sg) = m.dsm_loss_grad(x, y, *t, &prep);
                    for (a, b) in g.iter_mut().zip(sg) {
                        *a += b;
                    }
                    l
                });
                let inv = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                Ok((loss * inv, grad))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{GmmExpert, GsmExpert};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gsm_patch_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scales = GsmExpert::default_scales(20);
        let m = Model::Patch(PatchModel::init_gsm(7, &scales, &mut rng).unwrap());
        assert_eq!(m.n_params(), 3312);
        assert_eq!(m.n_params(), (49 - 1) * (49 + 20));
    }

    #[test]
    fn kinds_parse() {
        for k in [ModelKind::Patch, ModelKind::Wavelet, ModelKind::Shearlet] {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("fourier".parse::<ModelKind>().is_err());
    }

    /// Patch model with strictly positive, non-uniform weights so that
    /// one-sided differences at the simplex boundary cannot occur.
    fn fd_patch(rng: &mut ChaCha8Rng) -> PatchModel {
        let m = PatchModel::init_gmm(3, 5, rng).unwrap();
        let experts = (0..m.n_filters())
            .map(|_| {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
                let s = 2.0 * (w[0] + w[1]) + w[2];
                let half = w.iter().map(|v| v / s).collect();
                Expert::Gmm(GmmExpert::with_sigma0(5, 1.0, 0.5, 1.0, half).unwrap())
            })
            .collect();
        PatchModel::new(3, m.filters().clone(), experts).unwrap()
    }

    #[test]
    fn patch_dsm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = fd_patch(&mut rng);
        let pairs: Vec<(Image, Image, f64)> = (0..6)
            .map(|i| {
                let x = Image::from_vec(3, 3, (0..9).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
                let t = 0.002 + 0.01 * i as f64;
                let y = x.add_noise((2.0f64 * t).sqrt(), &mut rng);
                (x, y, t)
            })
            .collect();
        let batch: Vec<DsmSample> = pairs.iter().map(|(x, y, t)| (x, y, *t)).collect();
        let (_, grad) = m.dsm_batch(&batch).unwrap();
        let p0 = m.flat_params();
        let loss_at = |p: &[f64]| {
            let mut q = m.clone();
            q.set_flat_params(p, false).unwrap();
            q.dsm_batch(&batch).unwrap().0
        };
        let np = p0.len();
        for i in [0, 5, 17, 40, 71, np - 1, np - 2, np - 7, np - 13, np - 20] {
            let h = 1e-6;
            let mut pp = p0.clone();
            pp[i] += h;
            let lp = loss_at(&pp);
            pp[i] -= 2.0 * h;
            let lm = loss_at(&pp);
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-4 * grad[i].abs().max(1e-4);
            assert!((fd - grad[i]).abs() < tol, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn wavelet_batch_gradient_is_the_mean_of_samples() {
        let m = WaveletModel::init(4, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<(Image, Image, f64)> = (0..3)
            .map(|_| {
                let x = Image::from_vec(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
                let y = x.add_noise(0.1, &mut rng);
                (x, y, 0.005)
            })
            .collect();
        let batch: Vec<DsmSample> = pairs.iter().map(|(x, y, t)| (x, y, *t)).collect();
        let model = Model::Wavelet(m.clone());
        let (loss, grad) = model.dsm_batch(&batch).unwrap();
        let mut l2 = 0.0;
        let mut g2 = vec![0.0; grad.len()];
        for (x, y, t) in &batch {
            let (l, g) = m.dsm_loss_grad(x, y, *t, &m.prepare(*t));
            l2 += l / 3.0;
            for (a, b) in g2.iter_mut().zip(g) {
                *a += b / 3.0;
            }
        }
        assert!((loss - l2).abs() < 1e-14);
        for (a, b) in grad.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-14 * (1.0 + b.abs()));
        }
    }
}
