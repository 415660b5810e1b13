//! Synthetic test images: a dead-leaves corpus (occluding disks with a
//! power-law size distribution, which shares the edge and flat-region
//! statistics of natural photographs) and checkerboard noise maps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::Image;

/// Minimum disk radius in pixels; maximum as a fraction of the side.
const R_MIN: f64 = 2.0;
const R_MAX_FRACTION: f64 = 0.3;
/// Width of the Gaussian point-spread function applied after painting.
const PSF_SIGMA: f64 = 0.6;

/// One dead-leaves image of side `n`. Disks are painted until every pixel
/// is covered (or a generous cap is hit), each with a constant gray value
/// plus a faint linear shading, then softened by a small optical blur.
pub fn dead_leaves<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Image> {
    if n < 4 {
        return invalid("dead-leaves images need a side of at least 4");
    }
    let r_max = (R_MAX_FRACTION * n as f64).max(R_MIN + 1.0);
    let mut img = Image::filled(n, n, rng.random_range(0.1..0.9));
    // painted front to back: a pixel keeps the first disk that covers it
    let mut covered = vec![false; n * n];
    let mut left = n * n;
    let cap = 50 * n * n;
    for _ in 0..cap {
        if left == 0 {
            break;
        }
        // radius density ~ r^-3 on [R_MIN, r_max], by inverse transform
        let u: f64 = rng.random_range(0.0..1.0);
        let (a, b) = (R_MIN.powi(-2), r_max.powi(-2));
        let r = (a - u * (a - b)).powf(-0.5);
        let cy = rng.random_range(-r..n as f64 + r);
        let cx = rng.random_range(-r..n as f64 + r);
        let v: f64 = rng.random_range(0.1..0.9);
        let (gy, gx) = (rng.random_range(-0.1..0.1) / r, rng.random_range(-0.1..0.1) / r);
        let r0 = (cy - r).floor().max(0.0) as usize;
        let r1 = ((cy + r).ceil().max(0.0) as usize).min(n);
        let c0 = (cx - r).floor().max(0.0) as usize;
        let c1 = ((cx + r).ceil().max(0.0) as usize).min(n);
        for row in r0..r1 {
            for col in c0..c1 {
                let (dy, dx) = (row as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
                let idx = row * n + col;
                if !covered[idx] && dy * dy + dx * dx <= r * r {
                    covered[idx] = true;
                    left -= 1;
                    img.set(row, col, (v + gy * dy + gx * dx).clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(blur(&img, PSF_SIGMA))
}

/// Separable Gaussian blur with mirrored borders.
fn blur(img: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mirror = |i: i64, n: i64| {
        let i = if i < 0 { -i - 1 } else { i };
        if i >= n { 2 * n - 1 - i } else { i }
    };
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(src.width(), src.height(), |row, col| {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let off = j as i64 - r;
                let v = if horizontal {
                    src.get(row, mirror(col as i64 + off, w) as usize)
                } else {
                    src.get(mirror(row as i64 + off, h) as usize, col)
                };
                acc += kv * v;
            }
            acc / total
        })
    };
    pass(&pass(img, true), false)
}

/// `count` dead-leaves images of side `n`, image `i` seeded by `(seed, i)`.
pub fn corpus(count: usize, n: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            dead_leaves(n, &mut rng)
        })
        .collect()
}

/// Writes a corpus as `img_000.pgm`, `img_001.pgm`, ... into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, count: usize, n: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, img) in corpus(count, n, seed)?.iter().enumerate() {
        img.save(dir.join(format!("img_{i:03}.pgm")))?;
    }
    Ok(())
}

/// Per-pixel standard deviations alternating between `s0` and `s1` on
/// square cells of side `cell`.
pub fn checkerboard(width: usize, height: usize, cell: usize, s0: f64, s1: f64) -> Result<Image> {
    if cell == 0 {
        return invalid("checkerboard cell must be positive");
    }
    Ok(Image::from_fn(width, height, |r, c| {
        if (r / cell + c / cell).is_multiple_of(2) {
            s0
        } else {
            s1
        }
    }))
}
