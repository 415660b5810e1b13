//! Acceptance suite: one check per criterion, run in order by a single test
//! so that the trained model is shared and the report lines stay together.
//!
//! `POGMDM_ACCEPTANCE=3,9` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal};

use pogmdm::experts::{Expert, GmmExpert, GsmExpert};
use pogmdm::inference::{eb_denoise, psnr, ssim, stochastic_denoise, NoiseSchedule};
use pogmdm::mathkit::{
    daubechies, orthogonalize_filters_traced, project_simplex, project_wavelet_constraints,
    wavelet_residual, LagrangeMultipliers, WAVELET_GN_ITERATIONS,
};
use pogmdm::patch::{blind_denoise, default_noise_grid, PatchModel};
use pogmdm::shearlet::{ShearletModel, ShearletParams, ShearletSystem};
use pogmdm::training::{train, Corpus, TrainConfig};
use pogmdm::wavelet::{dwt2, WaveletModel};
use pogmdm::{synth, Image, Model};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// GMM expert on `[-eta, eta]` with random symmetric weights.
fn random_gmm(r: &mut ChaCha8Rng, l: usize, eta: f64, sigma0: f64) -> GmmExpert {
    let half: Vec<f64> = (0..l.div_ceil(2)).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = (0..l).map(|i| half[i.min(l - 1 - i)]).sum();
    GmmExpert::with_sigma0(l, eta, sigma0, 1.0, half.iter().map(|v| v / total).collect()).unwrap()
}

fn random_image(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Image {
    Image::from_vec(n, n, (0..n * n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `int f(x - u) N(u; 0, var) du` by the trapezoidal rule on a wide grid.
fn convolve(f: impl Fn(f64) -> f64, x: f64, var: f64) -> f64 {
    if var == 0.0 {
        return f(x);
    }
    let s = var.sqrt();
    let h = s / 200.0;
    let n = (12.0 * s / h) as i64;
    (-n..=n).map(|i| f(x - i as f64 * h) * normal_pdf(i as f64 * h, 0.0, var)).sum::<f64>() * h
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let mut worst_grid = 0.0f64;
    // 1-D experts: closed-form diffusion against numerical convolution
    let gmm = Expert::Gmm(random_gmm(&mut r, 9, 0.8, 0.12));
    let gsm = Expert::Gsm(GsmExpert::new(vec![0.05, 0.2, 0.6], vec![0.5, 0.3, 0.2], 1.0).unwrap());
    for e in [&gmm, &gsm] {
        for t in [0.001, 0.01, 0.05] {
            for x in [-1.1, -0.4, -0.05, 0.0, 0.3, 0.9] {
                let brute = convolve(|u| e.log_density(u, 0.0).exp(), x, 2.0 * t);
                worst_grid = worst_grid.max(rel(e.log_density(x, t).exp(), brute));
            }
        }
    }
    // patch model, a = 4: explicit homoscedastic GMM with covariance C0 + 2t P
    let base = PatchModel::init_gmm(2, 3, &mut r).unwrap();
    let k = base.filters().clone();
    let experts: Vec<Expert> = (0..3).map(|j| Expert::Gmm(random_gmm(&mut r, 3, 0.5, 0.1 + 0.05 * j as f64))).collect();
    let m = PatchModel::new(2, k.clone(), experts.clone()).unwrap();
    let gram_inv = (k.transpose() * &k).try_inverse().unwrap();
    let proj = &k * &gram_inv * k.transpose();
    let mut prec0 = DMatrix::zeros(4, 4);
    for (j, e) in experts.iter().enumerate() {
        let Expert::Gmm(g) = e else { unreachable!() };
        let kj = k.column(j);
        prec0 += kj * kj.transpose() / g.sigma0().powi(2);
    }
    let cov0 = prec0.pseudo_inverse(1e-12).unwrap();
    let mut worst_patch = 0.0f64;
    for t in [0.0, 0.004, 0.03] {
        let cov = &cov0 + &proj * (2.0 * t);
        let eig = cov.clone().symmetric_eigen();
        let pdet: f64 = eig.eigenvalues.iter().filter(|&&v| v > 1e-12).product();
        let cov_pinv = cov.pseudo_inverse(1e-12).unwrap();
        for _ in 0..10 {
            let x = DVector::from_fn(4, |_, _| r.random_range(-0.8..0.8));
            let px = &proj * &x;
            let mut dens = 0.0;
            for combo in 0..27usize {
                let idx = [combo % 3, combo / 3 % 3, combo / 9];
                let mut w = 1.0;
                let mut mu = DVector::zeros(3);
                for j in 0..3 {
                    let Expert::Gmm(g) = &experts[j] else { unreachable!() };
                    w *= g.weights()[idx[j]];
                    mu[j] = g.means()[idx[j]];
                }
                let mean = &k * &gram_inv * mu;
                let d = &px - mean;
                let q = (d.transpose() * &cov_pinv * &d)[(0, 0)];
                dens += w * (-0.5 * q).exp() / ((2.0 * PI).powi(3) * pdet).sqrt();
            }
            let got = m.log_density(x.as_slice(), t).map_err(|e| e.to_string())?.exp();
            worst_patch = worst_patch.max(rel(got, dens));
        }
    }
    // one-level wavelet model on 8x8: every detail coefficient diffuses alone
    let h = daubechies(4).unwrap();
    let lambdas = vec![0.7, 1.2, 1.6];
    let wexperts: Vec<Expert> = (0..3).map(|_| Expert::Gmm(random_gmm(&mut r, 5, 0.6, 0.15))).collect();
    let wm = WaveletModel::new(h.clone(), 1, lambdas.clone(), wexperts.clone()).unwrap();
    let x = random_image(&mut r, 8, 0.5);
    let c = dwt2(&x, &h, 1).unwrap();
    for t in [0.0, 0.005, 0.02] {
        let mut log_brute = 0.0;
        for (b, band) in c.details.iter().enumerate() {
            for &v in band.data() {
                let f = |u: f64| wexperts[b].log_density(lambdas[b] * u, 0.0).exp();
                log_brute += convolve(f, v, 2.0 * t).ln();
            }
        }
        let got = wm.log_density(&x, t).map_err(|e| e.to_string())?;
        worst_grid = worst_grid.max((got - log_brute).exp_m1().abs());
    }
    // single all-pass band on 4x4 with L = 2: explicit mixture over 2^16 means
    let n = 4;
    let e = GmmExpert::with_sigma0(2, 0.3, 0.2, 1.0, vec![0.5]).unwrap();
    let sys = ShearletSystem::from_spectra(n, vec![vec![Complex64::new(1.0, 0.0); n * n]], vec![1.0], vec![Expert::Gmm(e)])
        .map_err(|e| e.to_string())?;
    let x = random_image(&mut r, n, 0.6);
    let mut worst_conv = 0.0f64;
    for t in [0.0, 0.01, 0.3] {
        let var = 0.04 + 2.0 * t;
        let mut total = 0.0;
        for mask in 0u32..1 << 16 {
            let p: f64 = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| 0.5 * normal_pdf(v, if mask >> i & 1 == 1 { 0.3 } else { -0.3 }, var))
                .product();
            total += p;
        }
        let got = sys.log_density(&x, t).map_err(|e| e.to_string())?.exp();
        worst_conv = worst_conv.max(rel(got, total));
    }
    // Fourier eigenvalue identity of the default system at 8x8
    let ns = 8;
    let params = ShearletParams::default_for(2);
    let experts: Vec<Expert> = (0..params.n_bands()).map(|_| Expert::Gmm(GmmExpert::new(3, 0.5, 1.0).unwrap())).collect();
    let s = ShearletSystem::build(&params, ns, experts).map_err(|e| e.to_string())?;
    let (s0, t) = (0.01, 0.03);
    let d = ns * ns;
    let mut kmat = DMatrix::zeros(d * s.n_bands(), d);
    for col in 0..d {
        let mut e = Image::zeros(ns, ns);
        e.data_mut()[col] = 1.0;
        for (b, band) in s.analysis(&e).unwrap().iter().enumerate() {
            for (i, v) in band.iter().enumerate() {
                kmat[(b * d + i, col)] = v / s.lambdas()[b];
            }
        }
    }
    let eig = (kmat.transpose() * &kmat / s0).symmetric_eigen();
    let top = eig.eigenvalues.max();
    let mut direct: Vec<f64> = eig.eigenvalues.iter().filter(|&&v| v > 1e-9 * top).map(|v| 1.0 / v + 2.0 * t).collect();
    let mut rule: Vec<f64> = (0..d)
        .map(|i| s.spectra().iter().map(|g| g[i].norm_sqr()).sum::<f64>())
        .filter(|&v| v / s0 > 1e-9 * top)
        .map(|v| (s0 + 2.0 * t * v) / v)
        .collect();
    direct.sort_by(f64::total_cmp);
    rule.sort_by(f64::total_cmp);
    ensure(direct.len() == rule.len(), || format!("{} vs {} nonzero eigenvalues", direct.len(), rule.len()))?;
    let worst_eig = direct.iter().zip(&rule).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);

    ensure(worst_grid < 1e-3, || format!("grid-limited relative error {worst_grid:.2e}"))?;
    ensure(worst_patch < 1e-3, || format!("patch explicit-GMM relative error {worst_patch:.2e}"))?;
    ensure(worst_conv < 1e-3, || format!("all-pass band relative error {worst_conv:.2e}"))?;
    ensure(worst_eig < 1e-8, || format!("eigenvalue identity relative error {worst_eig:.2e}"))?;
    Ok(format!(
        "1-D/wavelet {worst_grid:.1e}, patch {worst_patch:.1e}, all-pass {worst_conv:.1e}, eigen {worst_eig:.1e}"
    ))
}

// ---------------------------------------------------------------- 2

/// Worst over points of `max|fd - s| / max|s|`.
fn fd_check(dim: usize, points: usize, r: &mut ChaCha8Rng, scale: f64, f: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-scale..scale)).collect();
        let (_, s) = f(&x);
        let mut err = 0.0f64;
        for i in 0..dim {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a).0 - f(&b).0) / (2.0 * h);
            err = err.max((fd - s[i]).abs());
        }
        let top = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err / top);
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut r = rng(202);
    let mut pm = PatchModel::init_gmm(5, 11, &mut r).unwrap();
    for e in pm.experts_mut() {
        let Expert::Gmm(g) = e else { unreachable!() };
        let fresh = random_gmm(&mut r, 11, 1.0, g.sigma0());
        g.set_half_weights(fresh.half_weights()).unwrap();
    }
    let t = 0.004;
    let patch = fd_check(25, 50, &mut r, 0.5, |p| (pm.log_density(p, t).unwrap(), pm.score(p, t).unwrap()));

    let experts: Vec<Expert> = (0..6).map(|_| Expert::Gmm(random_gmm(&mut r, 9, 0.5, 0.1))).collect();
    let wm = WaveletModel::new(daubechies(4).unwrap(), 2, vec![1.0, 0.8, 1.2, 1.1, 0.9, 1.3], experts).unwrap();
    let img = |p: &[f64]| Image::from_vec(8, 8, p.to_vec()).unwrap();
    let wave = fd_check(64, 50, &mut r, 0.5, |p| {
        let x = img(p);
        (wm.log_density(&x, t).unwrap(), wm.score(&x, t).unwrap().into_vec())
    });

    let mut sm = ShearletModel::init(2, 9).unwrap();
    let experts: Vec<Expert> = (0..sm.n_bands()).map(|_| Expert::Gmm(random_gmm(&mut r, 9, 0.5, 0.1))).collect();
    sm.set_params(sm.params().clone(), experts).unwrap();
    let shear = fd_check(64, 50, &mut r, 0.5, |p| {
        let x = img(p);
        (sm.log_density(&x, t).unwrap(), sm.score(&x, t).unwrap().into_vec())
    });
    ensure(patch < 1e-5 && wave < 1e-5 && shear < 1e-5, || {
        format!("relative errors patch {patch:.2e}, wavelet {wave:.2e}, shearlet {shear:.2e}")
    })?;
    Ok(format!("50 points each; patch {patch:.1e}, wavelet {wave:.1e}, shearlet {shear:.1e}"))
}

// ---------------------------------------------------------------- 3

/// Exact simplex projection by bisection on the threshold of the KKT
/// conditions `y = max(v - tau, 0)`, `sum y = 1`.
fn simplex_oracle(v: &[f64]) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

fn criterion_3() -> Outcome {
    let mut r = rng(303);
    let mut simplex_err = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..40);
        let scale = [0.1, 1.0, 10.0][r.random_range(0..3)];
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-scale..scale)).collect();
        let got = project_simplex(&v).map_err(|e| e.to_string())?;
        let want = simplex_oracle(&v);
        simplex_err = got.iter().zip(&want).fold(simplex_err, |m, (a, b)| m.max((a - b).abs()));
    }

    let k = DMatrix::from_fn(49, 48, |_, _| r.random_range(-1.0..1.0) / 7.0);
    let (bank, trace) = orthogonalize_filters_traced(&k, 8).map_err(|e| e.to_string())?;
    let monotone = trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    ensure(bank.norms.iter().all(|&d| d > 0.0), || "zero filter norm".into())?;
    let o = &bank.filters * DMatrix::from_diagonal(&DVector::from_iterator(48, bank.norms.iter().map(|d| 1.0 / d)));
    let ortho_err = (o.transpose() * &o - DMatrix::identity(48, 48)).amax();
    let diag_ok = bank.norms.iter().all(|&d| d >= 0.0);

    let db2 = daubechies(4).unwrap();
    let fixed = project_wavelet_constraints(&db2, &LagrangeMultipliers::zeros(4)).map_err(|e| e.to_string())?;
    let fixed_err = fixed.h.iter().zip(&db2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut worst_res = 0.0f64;
    let mut worst_iters = 0;
    for taps in [4, 8] {
        let h = daubechies(taps).unwrap();
        for _ in 0..50 {
            let p: Vec<f64> = h.iter().map(|v| v + r.random_range(-1e-3..1e-3)).collect();
            let out = project_wavelet_constraints(&p, &LagrangeMultipliers::zeros(taps)).map_err(|e| e.to_string())?;
            worst_res = worst_res.max(wavelet_residual(&out.h));
            worst_iters = worst_iters.max(out.iterations);
        }
    }
    ensure(simplex_err < 1e-8, || format!("simplex error {simplex_err:.2e}"))?;
    ensure(ortho_err < 1e-6 && diag_ok, || format!("O^T O deviation {ortho_err:.2e}"))?;
    ensure(monotone, || format!("objective not monotone: {trace:?}"))?;
    ensure(fixed_err < 1e-8, || format!("db2 moved by {fixed_err:.2e}"))?;
    ensure(worst_res < 1e-8 && worst_iters <= WAVELET_GN_ITERATIONS, || {
        format!("wavelet residual {worst_res:.2e} after {worst_iters} iterations")
    })?;
    Ok(format!(
        "simplex {simplex_err:.1e}, O^T O {ortho_err:.1e}, db2 {fixed_err:.1e}, residual {worst_res:.1e} in <= {worst_iters} GN steps"
    ))
}

// ---------------------------------------------------------------- 4

fn gmm_cdf(g: &GmmExpert, x: f64, t: f64) -> f64 {
    let s = g.variance(t).unwrap().sqrt();
    g.weights()
        .iter()
        .zip(g.means())
        .map(|(w, m)| w * Normal::new(m, s).unwrap().cdf(x))
        .sum()
}

fn gmm_variance(g: &GmmExpert, t: f64) -> f64 {
    let mean: f64 = g.weights().iter().zip(g.means()).map(|(w, m)| w * m).sum();
    g.weights().iter().zip(g.means()).map(|(w, m)| w * (m - mean).powi(2)).sum::<f64>() + g.variance(t).unwrap()
}

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let mut m = PatchModel::init_gmm(3, 7, &mut r).unwrap();
    for e in m.experts_mut() {
        let Expert::Gmm(g) = e else { unreachable!() };
        let fresh = random_gmm(&mut r, 7, 1.0, g.sigma0());
        g.set_half_weights(fresh.half_weights()).unwrap();
    }
    let n = 100_000;
    let ts = [0.0, 0.005, 0.02];
    // family-wise 1% over all filters and times (Bonferroni), asymptotic
    // one-sample KS quantile sqrt(-ln(alpha / 2) / 2)
    let alpha = 0.01 / (ts.len() * m.n_filters()) as f64;
    let crit = (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt();
    let (mut worst_ks, mut worst_cov) = (0.0f64, 0.0f64);
    for t in ts {
        let samples: Vec<Vec<f64>> = (0..n).map(|_| m.sample(t, &mut r).unwrap()).collect();
        for j in 0..m.n_filters() {
            let Expert::Gmm(g) = &m.experts()[j] else { unreachable!() };
            let kj = m.filters().column(j);
            let mut resp: Vec<f64> = samples.iter().map(|p| p.iter().zip(kj.iter()).map(|(a, b)| a * b).sum()).collect();
            resp.sort_by(f64::total_cmp);
            let mut d = 0.0f64;
            for (i, &x) in resp.iter().enumerate() {
                let f = gmm_cdf(g, x, t);
                d = d.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
            }
            worst_ks = worst_ks.max(d);
        }
        let a = 9;
        let mut emp = DMatrix::zeros(a, a);
        for p in &samples {
            let v = DVector::from_column_slice(p);
            emp += &v * v.transpose();
        }
        emp /= n as f64;
        // closed form: sum_j Var_j(t) k_j k_j^T / |k_j|^4
        let mut want = DMatrix::zeros(a, a);
        for j in 0..m.n_filters() {
            let Expert::Gmm(g) = &m.experts()[j] else { unreachable!() };
            let kj = m.filters().column(j);
            let nn = kj.norm_squared();
            want += kj * kj.transpose() * (gmm_variance(g, t) / (nn * nn));
        }
        worst_cov = worst_cov.max((emp - &want).norm() / want.norm());
    }
    ensure(worst_ks < crit, || format!("KS statistic {worst_ks:.2e} above family-wise 1% critical value {crit:.2e}"))?;
    ensure(worst_cov < 0.03, || format!("covariance relative Frobenius error {worst_cov:.3}"))?;
    Ok(format!("max KS D {worst_ks:.2e} < {crit:.2e}; covariance error {:.2}%", 100.0 * worst_cov))
}

// ---------------------------------------------------------------- 5

/// Sparse synthetic 7x7 model: random orthogonal filters, experts peaked at
/// zero like natural-image filter responses.
fn sparse_patch_model(r: &mut ChaCha8Rng) -> PatchModel {
    let base = PatchModel::init_gmm(7, 3, r).unwrap();
    let l: usize = 41;
    let eta = 0.6;
    let experts: Vec<Expert> = (0..48)
        .map(|_| {
            let scale = r.random_range(0.02..0.08);
            let half: Vec<f64> = (0..l.div_ceil(2))
                .map(|i| {
                    let mu = -eta + 2.0 * eta * i as f64 / (l - 1) as f64;
                    (-mu.abs() / scale).exp()
                })
                .collect();
            let total: f64 = (0..l).map(|i| half[i.min(l - 1 - i)]).sum();
            let w = half.iter().map(|v| v / total).collect();
            Expert::Gmm(GmmExpert::with_sigma0(l, eta, 2.0 * eta / (l - 1) as f64, 1.0, w).unwrap())
        })
        .collect();
    PatchModel::new(7, base.filters().clone(), experts).unwrap()
}

fn criterion_5() -> Outcome {
    let mut r = rng(505);
    let m = sparse_patch_model(&mut r);
    // sqrt(2t) grid 0.05, 0.10, ..., 0.50
    let sig_grid: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let t_grid: Vec<f64> = sig_grid.iter().map(|s| 0.5 * s * s).collect();
    let step = 0.05;
    let mut rates = Vec::new();
    for sigma in [0.1, 0.2, 0.3] {
        let t = 0.5 * sigma * sigma;
        let mut hits = 0;
        for _ in 0..1000 {
            let p = m.sample(t, &mut r).unwrap();
            let est = (2.0 * m.estimate_noise(&p, &t_grid).unwrap()).sqrt();
            if (est - sigma).abs() <= step + 1e-12 {
                hits += 1;
            }
        }
        rates.push((sigma, hits as f64 / 1000.0));
    }
    let text = rates.iter().map(|(s, h)| format!("sigma {s}: {:.1}%", 100.0 * h)).collect::<Vec<_>>().join(", ");
    ensure(rates.iter().all(|&(_, h)| h >= 0.9), || format!("within one grid step: {text}"))?;
    Ok(format!("within one grid step: {text}"))
}

// ---------------------------------------------------------------- 6, 8

struct Trained {
    model: PatchModel,
    test: Vec<Image>,
    train_seconds: f64,
}

fn train_desk_model() -> Trained {
    let corpus = Corpus::new(synth::corpus(24, 128, 11).unwrap()).unwrap();
    let cfg = TrainConfig {
        steps: 20_000,
        log_every: 1000,
        ..TrainConfig::default()
    };
    let mut model = cfg.init_model().unwrap();
    let start = Instant::now();
    train(&mut model, &corpus, &cfg).unwrap();
    let Model::Patch(model) = model else { unreachable!() };
    Trained {
        model,
        test: synth::corpus(5, 128, 999).unwrap(),
        train_seconds: start.elapsed().as_secs_f64(),
    }
}

fn criterion_6(tr: &Trained) -> Outcome {
    let model = Model::Patch(tr.model.clone());
    let sigma = 0.1;
    let mut r = rng(606);
    let (mut noisy, mut eb, mut st) = (0.0, 0.0, 0.0);
    let sched = NoiseSchedule::standard(sigma).map_err(|e| e.to_string())?;
    for x in &tr.test {
        let y = x.add_noise(sigma, &mut r);
        noisy += psnr(&y, x).unwrap();
        eb += psnr(&eb_denoise(&model, &y, 0.5 * sigma * sigma).unwrap().clamp01(), x).unwrap();
        let s = stochastic_denoise(&model, &y, sigma, &sched, &mut r).map_err(|e| e.to_string())?;
        st += psnr(&s.clamp01(), x).unwrap();
    }
    let k = tr.test.len() as f64;
    let (noisy, eb, st) = (noisy / k, eb / k, st / k);
    let summary = format!(
        "EB {eb:.2} dB, noisy {noisy:.2} dB, stochastic {st:.2} dB (training {:.0} s)",
        tr.train_seconds
    );
    ensure(eb >= 25.5 && eb - noisy >= 5.0 && (eb - st).abs() <= 4.0, || summary.clone())?;
    Ok(summary)
}

fn criterion_8(tr: &Trained) -> Outcome {
    let x = &tr.test[0];
    let cell = 32;
    let map = synth::checkerboard(x.width(), x.height(), cell, 0.1, 0.2).unwrap();
    let y = x.add_noise_map(&map, &mut rng(808)).unwrap();
    let res = blind_denoise(&tr.model, &y, &default_noise_grid()).map_err(|e| e.to_string())?;
    // compare region interiors, away from cell edges by a patch width
    let margin = tr.model.side();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for row in 0..x.height() {
        for col in 0..x.width() {
            let (dr, dc) = (row % cell, col % cell);
            if dr < margin || dr >= cell - margin || dc < margin || dc >= cell - margin {
                continue;
            }
            let v = res.sigma_map.get(row, col);
            if map.get(row, col) < 0.15 { lo.push(v) } else { hi.push(v) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ml, mh) = (mean(&lo), mean(&hi));
    let ratio = mh / ml;
    // two separated modes: the midpoint threshold classifies most pixels
    let mid = 0.5 * (ml + mh);
    let separated = (lo.iter().filter(|&&v| v < mid).count() + hi.iter().filter(|&&v| v >= mid).count()) as f64
        / (lo.len() + hi.len()) as f64;
    let gain = psnr(&res.denoised.clamp01(), x).unwrap() - psnr(&y, x).unwrap();
    let summary = format!(
        "region means {ml:.3}/{mh:.3} (ratio {ratio:.2}), {:.0}% separated, gain {gain:.2} dB",
        100.0 * separated
    );
    ensure((1.5..=2.5).contains(&ratio) && separated >= 0.8 && gain >= 4.0, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let scales = GsmExpert::default_scales(20);
    let m = Model::Patch(PatchModel::init_gsm(7, &scales, &mut rng(707)).unwrap());
    let n = m.n_params();
    let (a, i) = (49, 20);
    ensure(n == (a - 1) * (a + i) && n == 3312, || format!("{n} parameters"))?;
    Ok(format!("{n} learnable parameters"))
}

// ---------------------------------------------------------------- 9

fn ssim_reference(a: &Image, b: &Image) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = 7;
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0;
    for r0 in 0..=a.height() - k {
        for c0 in 0..=a.width() - k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in r0..r0 + k {
                for c in c0..c0 + k {
                    xs.push(a.get(r, c));
                    ys.push(b.get(r, c));
                }
            }
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
            let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
            let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn criterion_9() -> Outcome {
    let mut r = rng(909);
    let x = Image::from_vec(32, 24, (0..32 * 24).map(|_| r.random_range(0.0..0.9)).collect()).unwrap();
    let shifted = x.map(|v| v + 0.1);
    let p = psnr(&shifted, &x).unwrap();
    ensure((p - 20.0).abs() < 1e-9, || format!("offset PSNR {p}"))?;
    let s = ssim(&x, &x).unwrap();
    ensure((s - 1.0).abs() < 1e-12, || format!("SSIM(x, x) = {s}"))?;
    ensure(psnr(&x, &x).unwrap() == f64::INFINITY, || "identical images must give +inf".into())?;
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let a = Image::from_vec(20, 17, (0..20 * 17).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let b = Image::from_vec(20, 17, (0..20 * 17).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let mse = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.len() as f64;
        dp = dp.max((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs());
    }
    ensure(dp < 1e-10 && ds < 1e-8, || format!("reference deviations psnr {dp:.1e}, ssim {ds:.1e}"))?;
    Ok(format!("offset PSNR {p:.12} dB, SSIM(x,x) {s}, reference deviations {dp:.0e}/{ds:.0e}"))
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("POGMDM_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |c: usize| only.as_ref().is_none_or(|o| o.contains(&c));
    let mut trained: Option<Trained> = None;
    let mut need_model = |c: usize| -> Outcome {
        if trained.is_none() {
            trained = Some(train_desk_model());
        }
        let tr = trained.as_ref().unwrap();
        if c == 6 { criterion_6(tr) } else { criterion_8(tr) }
    };
    let limits = [60u64, 30, 60, 120, 300, 7200, 5, 600, 5];
    let names = [
        "diffusion exactness",
        "score correctness",
        "projection suites",
        "marginal and sampling consistency",
        "noise estimation identity",
        "desk-scale denoising",
        "GSM parameter count",
        "blind denoising",
        "metric fidelity",
    ];
    let mut failures = Vec::new();
    for c in 1..=9 {
        if !wanted(c) {
            continue;
        }
        let start = Instant::now();
        let res = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            7 => criterion_7(),
            9 => criterion_9(),
            _ => need_model(c),
        };
        let took = start.elapsed();
        // criterion 6 includes the shared training run
        let budget = Duration::from_secs(limits[c - 1]);
        let res = res.and_then(|s| {
            if took <= budget {
                Ok(s)
            } else {
                Err(format!("{s}; took {:.0} s, limit {} s", took.as_secs_f64(), budget.as_secs()))
            }
        });
        let (verdict, detail) = match &res {
            Ok(s) => ("PASS", s),
            Err(s) => {
                failures.push(c);
                ("FAIL", s)
            }
        };
        // straight to the stream: the harness swallows println! of passing tests
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {c} ({}): {verdict}  {detail}  [{:.1} s]", names[c - 1], took.as_secs_f64()).unwrap();
        out.flush().unwrap();
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
