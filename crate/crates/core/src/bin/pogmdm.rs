//! Command-line front end: training, denoising, noise estimation, sampling
//! and plot-data export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pogmdm::archive::{ModelArchive, TrainingMeta};
use pogmdm::config::{config_hash, parse_train_run, to_ini};
use pogmdm::experts::Expert;
use pogmdm::inference::{
    eb_denoise, fmt_db, psnr, ssim, stochastic_denoise, DenoiseReport, Method, NoiseSchedule,
    DEFAULT_EPSILON, DEFAULT_INNER, DEFAULT_SIGMA_C, DEFAULT_STEPS,
};
use pogmdm::patch::{blind_denoise, default_noise_grid, extract_patches, estimate_noise_patches, noise_grid, PatchModel};
use pogmdm::shearlet::ShearletModel;
use pogmdm::training::{load_corpus, train_with};
use pogmdm::wavelet::{idwt2, WaveletCoeffs, WaveletModel};
use pogmdm::{synth, Error, Image, Model, Result};

#[derive(Parser)]
#[command(name = "pogmdm", version, about = "Diffusion-exact products of Gaussian-mixture experts")]
struct Cli {
    /// Single-threaded, bit-reproducible numerics.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a configuration file and an image directory.
    Train(TrainArgs),
    /// Denoise an image with a known noise level.
    Denoise(DenoiseArgs),
    /// Per-patch noise level map (patch models).
    EstimateNoise(NoiseArgs),
    /// Denoise with per-patch estimated noise levels (patch models).
    BlindDenoise(NoiseArgs),
    /// Draw patches from a diffused patch model.
    Sample(SampleArgs),
    /// Export expert potentials and filter images.
    Inspect(InspectArgs),
    /// PSNR/SSIM table over a directory of clean images.
    Eval(EvalArgs),
    /// Write a synthetic dead-leaves corpus.
    SynthCorpus(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Loss trace (step, loss, seconds); defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory for periodic checkpoints; defaults to the output's directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Levels C of the stochastic sampler.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    levels: usize,
    /// Inner iterations B per level.
    #[arg(long, default_value_t = DEFAULT_INNER)]
    inner: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_C)]
    sigma_c: f64,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Noise standard deviation sqrt(2t) on the [0, 1] scale.
    #[arg(long)]
    sigma: f64,
    /// eb or stochastic.
    #[arg(long, default_value = "eb")]
    method: String,
    #[arg(long)]
    out: PathBuf,
    /// Treat the input as clean and corrupt it with seeded noise first.
    #[arg(long)]
    add_noise: bool,
    /// Clean reference for the report metrics.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Report CSV; defaults to `<out>.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Smallest and largest sqrt(2t) of the log-spaced search grid.
    #[arg(long, default_value_t = 0.005)]
    grid_lo: f64,
    #[arg(long, default_value_t = 0.45)]
    grid_hi: f64,
    #[arg(long, default_value_t = 64)]
    grid_count: usize,
    /// Clean reference for the report metrics.
    #[arg(long)]
    clean: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Diffusion time.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mosaic image.
    #[arg(long)]
    out: PathBuf,
    /// Raw samples, one patch per row; defaults to `<out>.csv`.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Points per curve.
    #[arg(long, default_value_t = 401)]
    points: usize,
    /// Side of the images used for wavelet functions and spectra.
    #[arg(long, default_value_t = 64)]
    side: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of clean images, read in lexicographic order.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.025, 0.05, 0.1, 0.2])]
    sigmas: Vec<f64>,
    #[arg(long, default_value = "eb")]
    method: String,
    /// Evaluate at most this many images.
    #[arg(long, default_value_t = 15)]
    limit: usize,
    /// Side of the central crop.
    #[arg(long, default_value_t = 320)]
    crop: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 24)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = setup_threads(cli.deterministic) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::EstimateNoise(a) => cmd_noise(a, false),
        Command::BlindDenoise(a) => cmd_noise(a, true),
        Command::Sample(a) => cmd_sample(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SynthCorpus(a) => synth::write_corpus(&a.out, a.count, a.size, a.seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn setup_threads(deterministic: bool) -> Result<()> {
    let n = if deterministic {
        1
    } else {
        match std::env::var("POGMDM_THREADS") {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("POGMDM_THREADS must be a positive integer, got '{v}'")))?,
            Err(_) => 0,
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_model(path: &Path) -> Result<Model> {
    ModelArchive::load(path)
        .map(|a| a.model)
        .map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })
}

fn patch_only(model: &Model, what: &str) -> Result<PatchModel> {
    match model {
        Model::Patch(m) => Ok(m.clone()),
        other => Err(Error::InvalidArgument(format!(
            "{what} needs a patch model, the archive holds a {} model",
            other.kind()
        ))),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)?;
    let run = parse_train_run(&text)?;
    let cfg = &run.train;
    let hash = config_hash(&run);
    let corpus = load_corpus(&a.corpus)?;
    let (mut model, state) = match &a.resume {
        Some(p) => {
            let ck = ModelArchive::load(p)?;
            let meta = ck
                .training
                .as_ref()
                .ok_or_else(|| Error::Config("checkpoint carries no training metadata".into()))?;
            if meta.config_hash != hash {
                return Err(Error::Config(format!(
                    "checkpoint was written with configuration {}, this run uses {hash}",
                    meta.config_hash
                )));
            }
            let st = ck
                .optimizer
                .ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
            (ck.model, Some(st))
        }
        None => (cfg.init_model()?, None),
    };
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let resumed_at = state.as_ref().map_or(0, |s| s.step);
    let mut loss = if resumed_at > 0 && loss_path.exists() {
        // keep the rows up to the checkpoint
        let old = std::fs::read_to_string(&loss_path)?;
        let mut w = create(&loss_path)?;
        for line in old.lines() {
            let keep = line.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_none_or(|s| s <= resumed_at);
            if keep {
                writeln!(w, "{line}")?;
            }
        }
        w
    } else {
        let mut w = create(&loss_path)?;
        writeln!(w, "step,loss,seconds")?;
        w
    };
    let ck_dir = a
        .checkpoint_dir
        .clone()
        .or_else(|| a.out.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let meta = |steps: usize| TrainingMeta {
        seed: cfg.seed,
        steps,
        config_hash: hash.clone(),
        config: to_ini(&run),
    };
    let mut hook = |p: &pogmdm::training::Progress| -> Result<()> {
        if let Some(r) = p.row {
            writeln!(loss, "{},{:.10e},{:.3}", r.step, r.loss, r.seconds)?;
            loss.flush()?;
            eprintln!("step {:>7}  loss {:.6e}  {:.1} s", r.step, r.loss, r.seconds);
        }
        if run.checkpoint_every > 0 && p.step.is_multiple_of(run.checkpoint_every) && p.step < cfg.steps {
            std::fs::create_dir_all(&ck_dir)?;
            let ar = ModelArchive {
                model: p.model.clone(),
                training: Some(meta(p.step)),
                optimizer: Some(p.state.clone()),
            };
            ar.save(ck_dir.join(format!("{stem}.step{:07}.zip", p.step)))?;
        }
        Ok(())
    };
    let outcome = train_with(&mut model, &corpus, cfg, state, &mut hook)?;
    let ar = ModelArchive {
        model,
        training: Some(meta(outcome.state.step)),
        optimizer: Some(outcome.state),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ar.save(&a.out)
}

fn schedule(s: &ScheduleArgs, sigma: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(sigma, s.sigma_c, s.levels, s.epsilon, s.inner)
}

fn run_method(model: &Model, y: &Image, sigma: f64, method: Method, s: &ScheduleArgs, seed: u64) -> Result<Image> {
    match method {
        Method::EmpiricalBayes => eb_denoise(model, y, 0.5 * sigma * sigma),
        Method::Stochastic => {
            let sched = schedule(s, sigma)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            stochastic_denoise(model, y, sigma, &sched, &mut rng)
        }
        Method::Blind => {
            let m = patch_only(model, "blind denoising")?;
            Ok(blind_denoise(&m, y, &default_noise_grid())?.denoised)
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    Ok(())
}

fn cmd_denoise(a: DenoiseArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let method: Method = a.method.parse()?;
    if method == Method::Blind {
        return Err(Error::Config("use the blind-denoise command for blind denoising".into()));
    }
    let model = load_model(&a.model)?;
    let input = Image::load(&a.input)?;
    let (y, clean) = if a.add_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (input.add_noise(a.sigma, &mut rng), Some(input))
    } else {
        let clean = a.clean.as_ref().map(Image::load).transpose()?;
        (input, clean)
    };
    let start = std::time::Instant::now();
    let raw = run_method(&model, &y, a.sigma, method, &a.schedule, a.seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let out = raw.clamp01();
    out.save(&a.out)?;
    if a.add_noise {
        y.save(with_suffix(&a.out, ".noisy.pgm"))?;
    }
    let mut w = create(&a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv")))?;
    writeln!(w, "method,sigma,psnr_noisy_db,psnr_db,ssim,seconds")?;
    match &clean {
        Some(c) => {
            let (p, s, pn) = (psnr(&out, c)?, ssim(&out, c)?, psnr(&y, c)?);
            writeln!(w, "{method},{},{},{},{s:.6},{seconds:.3}", a.sigma, fmt_db(pn), fmt_db(p))?;
            println!("{method}: PSNR {} dB (noisy {} dB), SSIM {s:.4}, {seconds:.2} s", fmt_db(p), fmt_db(pn));
        }
        None => {
            writeln!(w, "{method},{},,,,{seconds:.3}", a.sigma)?;
            println!("{method}: {seconds:.2} s (no clean reference, metrics skipped)");
        }
    }
    Ok(())
}

fn cmd_noise(a: NoiseArgs, denoise: bool) -> Result<()> {
    let model = load_model(&a.model)?;
    let m = patch_only(&model, if denoise { "blind denoising" } else { "noise estimation" })?;
    let y = Image::load(&a.input)?;
    let grid = noise_grid(a.grid_lo, a.grid_hi, a.grid_count)?;
    std::fs::create_dir_all(&a.out)?;
    let start = std::time::Instant::now();
    let (times, map, denoised) = if denoise {
        let r = blind_denoise(&m, &y, &grid)?;
        (r.patch_times, r.sigma_map, Some(r.denoised))
    } else {
        let pg = extract_patches(&y, m.side())?;
        let times = estimate_noise_patches(&m, &pg, &grid)?;
        let sig: Vec<f64> = times.iter().map(|t| (2.0 * t).sqrt()).collect();
        let map = pg.scatter_scalar(&sig)?;
        (times, map, None)
    };
    let seconds = start.elapsed().as_secs_f64();
    // gray level 255 is the top of the search grid
    map.map(|v| v / a.grid_hi).save(a.out.join("sigma_map.pgm"))?;
    let b = m.side();
    let cols = y.width() + 1 - b;
    let mut w = create(&a.out.join("sigma_patches.csv"))?;
    writeln!(w, "row,col,sigma")?;
    for (i, t) in times.iter().enumerate() {
        writeln!(w, "{},{},{:.6}", i / cols, i % cols, (2.0 * t).sqrt())?;
    }
    let mean = map.mean();
    println!("mean noise level {mean:.4} over {} patches, {seconds:.2} s", times.len());
    if let Some(d) = denoised {
        let out = d.clamp01();
        out.save(a.out.join("denoised.pgm"))?;
        let mut r = create(&a.out.join("report.csv"))?;
        writeln!(r, "{},mean_sigma", DenoiseReport::CSV_HEADER)?;
        match a.clean.as_ref().map(Image::load).transpose()? {
            Some(c) => {
                let (p, s) = (psnr(&out, &c)?, ssim(&out, &c)?);
                writeln!(r, "blind,{},{s:.6},{seconds:.3},{mean:.6}", fmt_db(p))?;
                println!("blind: PSNR {} dB (noisy {} dB), SSIM {s:.4}", fmt_db(p), fmt_db(psnr(&y, &c)?));
            }
            None => writeln!(r, "blind,,,{seconds:.3},{mean:.6}")?,
        }
    }
    Ok(())
}

/// Tiles equally sized square tiles with a one-pixel gap, rescaling all
/// values jointly to `[0, 1]`.
fn mosaic(tiles: &[Vec<f64>], side: usize) -> Result<Image> {
    let n = tiles.len().max(1);
    let per_row = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(per_row);
    let (lo, hi) = tiles
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let step = side + 1;
    let mut img = Image::filled(per_row * step + 1, rows * step + 1, 1.0);
    for (k, t) in tiles.iter().enumerate() {
        let (r0, c0) = (1 + (k / per_row) * step, 1 + (k % per_row) * step);
        for (i, v) in t.iter().enumerate() {
            img.set(r0 + i / side, c0 + i % side, (v - lo) / span);
        }
    }
    Ok(img)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let m = patch_only(&model, "sampling")?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let samples = (0..a.count).map(|_| m.sample(a.t, &mut rng)).collect::<Result<Vec<_>>>()?;
    mosaic(&samples, m.side())?.save(&a.out)?;
    let mut w = create(&a.raw.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv")))?;
    for s in &samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:.9e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

const INSPECT_SIGMAS: [f64; 5] = [0.0, 0.025, 0.05, 0.1, 0.2];

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    if a.points < 2 {
        return Err(Error::InvalidArgument("need at least two points per curve".into()));
    }
    let model = load_model(&a.model)?;
    std::fs::create_dir_all(&a.out)?;
    for (j, e) in model.experts().iter().enumerate() {
        // cover the support at the largest level
        let top = 0.5 * INSPECT_SIGMAS[4] * INSPECT_SIGMAS[4];
        let r = match e {
            Expert::Gmm(g) => g.eta() + 4.0 * g.variance(top)?.sqrt(),
            Expert::Gsm(g) => 4.0 * g.variances(top)?.last().copied().unwrap_or(1.0).sqrt(),
        };
        for s in INSPECT_SIGMAS {
            let t = 0.5 * s * s;
            let prep = e.prepare(t);
            let mut w = create(&a.out.join(format!("expert_{j:03}_s{s:.3}.csv")))?;
            writeln!(w, "x,neg_log_psi,neg_dlog_psi")?;
            for i in 0..a.points {
                let x = -r + 2.0 * r * i as f64 / (a.points - 1) as f64;
                let (l, g) = prep.log_score(x);
                writeln!(w, "{x:.9e},{:.9e},{:.9e}", -l, -g)?;
            }
        }
    }
    match &model {
        Model::Patch(m) => {
            let k = m.filters();
            let tiles: Vec<Vec<f64>> = (0..k.ncols()).map(|j| k.column(j).iter().copied().collect()).collect();
            mosaic(&tiles, m.side())?.save(a.out.join("filters.pgm"))?;
        }
        Model::Wavelet(m) => wavelet_functions(m, a.side)?.save(a.out.join("wavelet_functions.pgm"))?,
        Model::Shearlet(m) => shearlet_spectra(m, a.side)?.save(a.out.join("spectra.pgm"))?,
    }
    Ok(())
}

/// Synthesis atoms: the inverse transform of one unit coefficient in the
/// middle of each detail band.
fn wavelet_functions(m: &WaveletModel, side: usize) -> Result<Image> {
    let n = side.next_multiple_of(1 << m.levels());
    let blank = |l: usize| Image::zeros(n >> l, n >> l);
    let mut tiles = Vec::new();
    for band in 0..3 * m.levels() {
        let level = band / 3 + 1;
        let mut details: Vec<Image> = (0..3 * m.levels()).map(|b| blank(b / 3 + 1)).collect();
        let c = (n >> level) / 2;
        details[band].set(c, c, 1.0);
        let coeffs = WaveletCoeffs {
            details,
            approx: blank(m.levels()),
        };
        tiles.push(idwt2(&coeffs, m.h())?.into_vec());
    }
    mosaic(&tiles, n)
}

/// Spectrum magnitudes of every band, zero frequency centered.
fn shearlet_spectra(m: &ShearletModel, side: usize) -> Result<Image> {
    let sys = m.system(side)?;
    let n = sys.n();
    let tiles: Vec<Vec<f64>> = sys
        .spectra()
        .iter()
        .map(|s| {
            (0..n * n)
                .map(|i| {
                    let (r, c) = ((i / n + n / 2) % n, (i % n + n / 2) % n);
                    s[r * n + c].norm()
                })
                .collect()
        })
        .collect();
    mosaic(&tiles, n)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    for &s in &a.sigmas {
        check_sigma(s)?;
    }
    let model = load_model(&a.model)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.images)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["pgm", "png", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
    });
    paths.sort();
    paths.truncate(a.limit);
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", a.images.display())));
    }
    let mut w = create(&a.out)?;
    writeln!(w, "image,sigma,method,psnr_noisy_db,psnr_db,ssim,seconds")?;
    for (si, &sigma) in a.sigmas.iter().enumerate() {
        let (mut sum_p, mut sum_s, mut finite) = (0.0, 0.0, true);
        for (ii, p) in paths.iter().enumerate() {
            let clean = Image::load(p)?.center_crop(a.crop, a.crop);
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream((si * paths.len() + ii) as u64);
            let y = clean.add_noise(sigma, &mut rng);
            let r = DenoiseReport::measure(method, &clean, || {
                run_method(&model, &y, sigma, method, &a.schedule, a.seed)
            })?;
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("?");
            writeln!(
                w,
                "{name},{sigma},{method},{},{},{:.6},{:.3}",
                fmt_db(psnr(&y, &clean)?),
                fmt_db(r.psnr),
                r.ssim,
                r.seconds
            )?;
            finite &= r.psnr.is_finite();
            sum_p += r.psnr;
            sum_s += r.ssim;
        }
        let k = paths.len() as f64;
        let mean_p = if finite { fmt_db(sum_p / k) } else { "inf".into() };
        writeln!(w, "mean,{sigma},{method},,{mean_p},{:.6},", sum_s / k)?;
        println!("sigma {sigma}: mean PSNR {mean_p} dB, SSIM {:.4}", sum_s / k);
    }
    Ok(())
}
