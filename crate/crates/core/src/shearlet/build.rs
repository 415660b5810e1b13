//! Digital shearlet filters from a 1-D low-pass `h1` and a 2-D fan filter `P`.
//!
//! Wedges: the fan filter is upsampled along rows, low-passed along columns,
//! embedded at image size, upsampled along columns, low-passed along rows,
//! sheared, low-passed again, decimated and transformed. Band-passes are the
//! 1-D multiresolution high-pass sequences. Every linear step has an explicit
//! adjoint so gradients flow back to `P` and the `h1` occurrences.
//!
//! Arrays are "centered": an odd-sized filter's middle tap sits at index
//! `floor(len/2)` of the target, which the FFT sees at the origin.

use rustfft::num_complex::Complex64;

use crate::fft::Fft2;

/// Shears per cone and scale.
pub(crate) const SHEARS: [i64; 5] = [-2, -1, 0, 1, 2];
/// Zeros inserted between fan-filter rows.
const ROW_ZEROS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub d: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            d: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), rows * cols);
        Self { rows, cols, d }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.d[r * self.cols + c]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.d[r * self.cols + c]
    }

    fn add(&mut self, o: &Mat) {
        for (a, b) in self.d.iter_mut().zip(&o.d) {
            *a += b;
        }
    }
}

fn upsample_rows(a: &Mat, z: usize) -> Mat {
    let mut out = Mat::zeros((a.rows - 1) * (z + 1) + 1, a.cols);
    for r in 0..a.rows {
        for c in 0..a.cols {
            *out.at_mut(r * (z + 1), c) = a.at(r, c);
        }
    }
    out
}

fn upsample_rows_adj(g: &Mat, rows: usize, z: usize) -> Mat {
    let mut out = Mat::zeros(rows, g.cols);
    for r in 0..rows {
        for c in 0..g.cols {
            *out.at_mut(r, c) = g.at(r * (z + 1), c);
        }
    }
    out
}

fn upsample_cols(a: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows, 2 * a.cols - 1);
    for r in 0..a.rows {
        for c in 0..a.cols {
            *out.at_mut(r, 2 * c) = a.at(r, c);
        }
    }
    out
}

fn upsample_cols_adj(g: &Mat) -> Mat {
    let cols = g.cols.div_ceil(2);
    let mut out = Mat::zeros(g.rows, cols);
    for r in 0..g.rows {
        for c in 0..cols {
            *out.at_mut(r, c) = g.at(r, 2 * c);
        }
    }
    out
}

/// Centered column filtering truncated to the input size:
/// `out[r][c] = sum_j f[j] a[r + j - m/2][c]`.
fn col_filter_same(a: &Mat, f: &[f64]) -> Mat {
    let h = (f.len() / 2) as isize;
    let mut out = Mat::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        for (j, &fj) in f.iter().enumerate() {
            let s = r as isize + j as isize - h;
            if s < 0 || s >= a.rows as isize {
                continue;
            }
            for c in 0..a.cols {
                *out.at_mut(r, c) += fj * a.at(s as usize, c);
            }
        }
    }
    out
}

fn col_filter_same_adj(g: &Mat, f: &[f64]) -> Mat {
    let h = (f.len() / 2) as isize;
    let mut out = Mat::zeros(g.rows, g.cols);
    for r in 0..g.rows {
        for (j, &fj) in f.iter().enumerate() {
            let s = r as isize + j as isize - h;
            if s < 0 || s >= g.rows as isize {
                continue;
            }
            for c in 0..g.cols {
                *out.at_mut(s as usize, c) += fj * g.at(r, c);
            }
        }
    }
    out
}

fn col_filter_same_taps(g: &Mat, a: &Mat, m: usize) -> Vec<f64> {
    let h = (m / 2) as isize;
    let mut out = vec![0.0; m];
    for r in 0..g.rows {
        for (j, o) in out.iter_mut().enumerate() {
            let s = r as isize + j as isize - h;
            if s < 0 || s >= g.rows as isize {
                continue;
            }
            for c in 0..g.cols {
                *o += g.at(r, c) * a.at(s as usize, c);
            }
        }
    }
    out
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Centers `a` in a `rows x cols` array; entries that fall outside wrap around.
fn embed(a: &Mat, rows: usize, cols: usize) -> Mat {
    let (pr, pc) = embed_offsets(a, rows, cols);
    let mut out = Mat::zeros(rows, cols);
    for r in 0..a.rows {
        let rr = wrap(pr + r as isize, rows);
        for c in 0..a.cols {
            *out.at_mut(rr, wrap(pc + c as isize, cols)) += a.at(r, c);
        }
    }
    out
}

fn embed_offsets(a: &Mat, rows: usize, cols: usize) -> (isize, isize) {
    (
        (rows / 2) as isize - (a.rows / 2) as isize,
        (cols / 2) as isize - (a.cols / 2) as isize,
    )
}

fn embed_adj(g: &Mat, rows: usize, cols: usize) -> Mat {
    let shape = Mat::zeros(rows, cols);
    let (pr, pc) = embed_offsets(&shape, g.rows, g.cols);
    let mut out = shape;
    for r in 0..rows {
        let rr = wrap(pr + r as isize, g.rows);
        for c in 0..cols {
            *out.at_mut(r, c) = g.at(rr, wrap(pc + c as isize, g.cols));
        }
    }
    out
}

/// Circular convolution along rows with a centered 1-D filter.
fn row_conv(a: &Mat, f: &[f64]) -> Mat {
    let h = (f.len() / 2) as isize;
    let w = a.cols;
    let mut out = Mat::zeros(a.rows, w);
    for r in 0..a.rows {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, &fj) in f.iter().enumerate() {
                acc += fj * a.at(r, wrap(c as isize - (j as isize - h), w));
            }
            *out.at_mut(r, c) = acc;
        }
    }
    out
}

fn row_conv_adj(g: &Mat, f: &[f64]) -> Mat {
    let h = (f.len() / 2) as isize;
    let w = g.cols;
    let mut out = Mat::zeros(g.rows, w);
    for r in 0..g.rows {
        for c in 0..w {
            let gv = g.at(r, c);
            for (j, &fj) in f.iter().enumerate() {
                *out.at_mut(r, wrap(c as isize - (j as isize - h), w)) += fj * gv;
            }
        }
    }
    out
}

fn row_conv_taps(g: &Mat, a: &Mat, m: usize) -> Vec<f64> {
    let h = (m / 2) as isize;
    let w = g.cols;
    let mut out = vec![0.0; m];
    for r in 0..g.rows {
        for c in 0..w {
            let gv = g.at(r, c);
            for (j, o) in out.iter_mut().enumerate() {
                *o += gv * a.at(r, wrap(c as isize - (j as isize - h), w));
            }
        }
    }
    out
}

fn shear_shift(rows: usize, r: usize, k: i64) -> isize {
    k as isize * ((rows / 2) as isize - r as isize)
}

/// Row `r` is circularly shifted right by `k * (floor(rows/2) - r)`.
fn shear(a: &Mat, k: i64) -> Mat {
    let mut out = Mat::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        let s = shear_shift(a.rows, r, k);
        for c in 0..a.cols {
            *out.at_mut(r, wrap(c as isize + s, a.cols)) = a.at(r, c);
        }
    }
    out
}

fn shear_adj(g: &Mat, k: i64) -> Mat {
    let mut out = Mat::zeros(g.rows, g.cols);
    for r in 0..g.rows {
        let s = shear_shift(g.rows, r, k);
        for c in 0..g.cols {
            *out.at_mut(r, c) = g.at(r, wrap(c as isize + s, g.cols));
        }
    }
    out
}

/// Keeps even columns, scaled by 2.
fn decimate(a: &Mat) -> Mat {
    let cols = a.cols.div_ceil(2);
    let mut out = Mat::zeros(a.rows, cols);
    for r in 0..a.rows {
        for c in 0..cols {
            *out.at_mut(r, c) = 2.0 * a.at(r, 2 * c);
        }
    }
    out
}

fn decimate_adj(g: &Mat, cols: usize) -> Mat {
    let mut out = Mat::zeros(g.rows, cols);
    for r in 0..g.rows {
        for c in 0..g.cols {
            *out.at_mut(r, 2 * c) = 2.0 * g.at(r, c);
        }
    }
    out
}

/// FFT of a centered square array (the center moves to the origin first).
fn spectrum(fft: &Fft2, a: &Mat) -> Vec<Complex64> {
    let n = a.rows;
    let h = n / 2;
    let mut buf = vec![Complex64::default(); n * n];
    for r in 0..n {
        for c in 0..n {
            buf[wrap(r as isize - h as isize, n) * n + wrap(c as isize - h as isize, n)] =
                Complex64::new(a.at(r, c), 0.0);
        }
    }
    fft.forward(&mut buf);
    buf
}

/// Adjoint of [`spectrum`] for the pairing `Re sum conj(dS) G`.
fn spectrum_adj(fft: &Fft2, g: &[Complex64], n: usize) -> Mat {
    let mut buf = g.to_vec();
    fft.inverse(&mut buf);
    let scale = (n * n) as f64;
    let h = n / 2;
    let mut out = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            *out.at_mut(r, c) =
                scale * buf[wrap(r as isize - h as isize, n) * n + wrap(c as isize - h as isize, n)].re;
        }
    }
    out
}

/// Full 1-D convolution.
pub(crate) fn conv1(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Gradients of `conv1(a, b)` given the output gradient.
pub(crate) fn conv1_adj(g: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            ga[i] += g[i + j] * y;
            gb[j] += g[i + j] * x;
        }
    }
    (ga, gb)
}

/// One zero between taps.
pub(crate) fn upsample1(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * x.len() - 1];
    for (i, &v) in x.iter().enumerate() {
        out[2 * i] = v;
    }
    out
}

pub(crate) fn upsample1_adj(g: &[f64]) -> Vec<f64> {
    g.iter().step_by(2).copied().collect()
}

/// `(-1)^m h_m`.
pub(crate) fn mirror_filter(h: &[f64]) -> Vec<f64> {
    h.iter()
        .enumerate()
        .map(|(m, &v)| if m % 2 == 0 { v } else { -v })
        .collect()
}

/// Spectrum (constant along rows) of a centered 1-D row filter on `n x n`.
pub(crate) fn row_filter_spectrum(f: &[f64], n: usize) -> Vec<Complex64> {
    let h = (f.len() / 2) as isize;
    let line: Vec<Complex64> = (0..n)
        .map(|v| {
            f.iter()
                .enumerate()
                .map(|(j, &fj)| {
                    let ph = -2.0 * std::f64::consts::PI * (v as f64) * ((j as isize - h) as f64)
                        / n as f64;
                    fj * Complex64::from_polar(1.0, ph)
                })
                .sum()
        })
        .collect();
    let mut out = Vec::with_capacity(n * n);
    for _ in 0..n {
        out.extend_from_slice(&line);
    }
    out
}

pub(crate) fn row_filter_spectrum_adj(g: &[Complex64], m: usize, n: usize) -> Vec<f64> {
    let h = (m / 2) as isize;
    let mut colsum = vec![Complex64::default(); n];
    for r in 0..n {
        for v in 0..n {
            colsum[v] += g[r * n + v];
        }
    }
    (0..m)
        .map(|j| {
            colsum
                .iter()
                .enumerate()
                .map(|(v, &s)| {
                    let ph = 2.0 * std::f64::consts::PI * (v as f64) * ((j as isize - h) as f64)
                        / n as f64;
                    (Complex64::from_polar(1.0, ph) * s).re
                })
                .sum()
        })
        .collect()
}

/// Filters feeding the wedge pipeline.
pub(crate) struct WedgeInputs<'a> {
    /// Square fan filter, row-major, odd side.
    pub p: &'a [f64],
    pub p_side: usize,
    /// Column low-pass after row upsampling.
    pub low2: &'a [f64],
    /// Row low-pass before shearing.
    pub lp: &'a [f64],
    /// Row low-pass after shearing.
    pub lpf: &'a [f64],
}

/// Intermediate arrays kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct WedgeTrace {
    upsampled: Mat,
    pre_lp: Mat,
    sheared: Vec<Mat>,
}

/// One wedge spectrum per entry of [`SHEARS`].
pub(crate) fn wedges(fft: &Fft2, n: usize, inp: &WedgeInputs) -> (Vec<Vec<Complex64>>, WedgeTrace) {
    let p = Mat::from_vec(inp.p_side, inp.p_side, inp.p.to_vec());
    let upsampled = upsample_rows(&p, ROW_ZEROS);
    let filtered = col_filter_same(&upsampled, inp.low2);
    let pre_lp = upsample_cols(&embed(&filtered, n, n));
    let lowpassed = row_conv(&pre_lp, inp.lp);
    let mut sheared = Vec::with_capacity(SHEARS.len());
    let mut out = Vec::with_capacity(SHEARS.len());
    for &k in &SHEARS {
        let s = shear(&lowpassed, k);
        out.push(spectrum(fft, &decimate(&row_conv(&s, inp.lpf))));
        sheared.push(s);
    }
    (
        out,
        WedgeTrace {
            upsampled,
            pre_lp,
            sheared,
        },
    )
}

/// Gradients of `sum_k Re <dW_k, G_k>` with respect to the wedge inputs.
#[derive(Debug, Clone)]
pub(crate) struct WedgeGrad {
    pub p: Vec<f64>,
    pub low2: Vec<f64>,
    pub lp: Vec<f64>,
    pub lpf: Vec<f64>,
}

pub(crate) fn wedges_backward(
    fft: &Fft2,
    n: usize,
    inp: &WedgeInputs,
    trace: &WedgeTrace,
    g: &[Vec<Complex64>],
) -> WedgeGrad {
    let w = 2 * n - 1;
    let mut g_lpf = vec![0.0; inp.lpf.len()];
    let mut g_low = Mat::zeros(n, w);
    for (i, &k) in SHEARS.iter().enumerate() {
        let gd = decimate_adj(&spectrum_adj(fft, &g[i], n), w);
        for (a, b) in g_lpf.iter_mut().zip(row_conv_taps(&gd, &trace.sheared[i], inp.lpf.len())) {
            *a += b;
        }
        g_low.add(&shear_adj(&row_conv_adj(&gd, inp.lpf), k));
    }
    let g_lp = row_conv_taps(&g_low, &trace.pre_lp, inp.lp.len());
    let g_emb = upsample_cols_adj(&row_conv_adj(&g_low, inp.lp));
    let g_filt = embed_adj(&g_emb, trace.upsampled.rows, trace.upsampled.cols);
    let g_low2 = col_filter_same_taps(&g_filt, &trace.upsampled, inp.low2.len());
    let g_up = col_filter_same_adj(&g_filt, inp.low2);
    let g_p = upsample_rows_adj(&g_up, inp.p_side, ROW_ZEROS);
    WedgeGrad {
        p: g_p.d,
        low2: g_low2,
        lp: g_lp,
        lpf: g_lpf,
    }
}
