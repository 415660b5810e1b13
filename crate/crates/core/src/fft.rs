//! Two-dimensional FFTs on row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Clone for Fft2 {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            row_fwd: self.row_fwd.clone(),
            row_inv: self.row_inv.clone(),
            col_fwd: self.col_fwd.clone(),
            col_inv: self.col_inv.clone(),
        }
    }
}

impl Fft2 {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.rows * self.cols);
        row.process(data);
        let mut buf = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                buf[r] = data[r * self.cols + c];
            }
            col.process(&mut buf);
            for r in 0..self.rows {
                data[r * self.cols + c] = buf[r];
            }
        }
    }

    /// Unnormalized forward transform in place.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform in place, scaled by `1/(rows*cols)`.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.rows * self.cols) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub(crate) fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut d);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let (r, c) = (3, 4);
        let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let f = Fft2::new(r, c).forward_real(&x);
        for u in 0..r {
            for v in 0..c {
                let mut acc = Complex64::default();
                for a in 0..r {
                    for b in 0..c {
                        let ph = -2.0 * std::f64::consts::PI
                            * ((u * a) as f64 / r as f64 + (v * b) as f64 / c as f64);
                        acc += x[a * c + b] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - f[u * c + v]).norm() < 1e-12);
            }
        }
        let mut back = f.clone();
        Fft2::new(r, c).inverse(&mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }
}
