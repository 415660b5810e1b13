//! Grayscale `f64` images and 8-bit PGM/PNG I/O.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!(
                "{} values for a {width}x{height} image",
                data.len()
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, top: usize, left: usize, width: usize, height: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return invalid(format!(
                "crop {width}x{height} at ({top},{left}) exceeds {}x{}",
                self.width, self.height
            ));
        }
        Ok(Image::from_fn(width, height, |r, c| self.get(top + r, left + c)))
    }

    /// Centered crop, clipped to the image.
    pub fn center_crop(&self, width: usize, height: usize) -> Image {
        let w = width.min(self.width);
        let h = height.min(self.height);
        self.crop((self.height - h) / 2, (self.width - w) / 2, w, h)
            .expect("clipped crop fits")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Adds `sigma * N(0, 1)` noise per pixel.
    pub fn add_noise<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Image {
        self.map_with_rng(rng, |v, z| v + sigma * z)
    }

    fn map_with_rng<R: Rng + ?Sized>(&self, rng: &mut R, f: impl Fn(f64, f64) -> f64) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                f(v, z)
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Adds noise with a per-pixel standard deviation.
    pub fn add_noise_map<R: Rng + ?Sized>(&self, sigma: &Image, rng: &mut R) -> Result<Image> {
        if !self.same_shape(sigma) {
            return invalid("noise map shape mismatch");
        }
        let mut out = self.clone();
        for (v, s) in out.data.iter_mut().zip(&sigma.data) {
            let z: f64 = StandardNormal.sample(rng);
            *v += s * z;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.height, self.width, |r, c| self.get(c, r))
    }

    /// One of the eight dihedral transforms (rotations by `k * 90` degrees,
    /// optionally preceded by a horizontal flip for `k >= 4`).
    pub fn dihedral(&self, k: usize) -> Image {
        let mut img = if k >= 4 {
            Image::from_fn(self.width, self.height, |r, c| {
                self.get(r, self.width - 1 - c)
            })
        } else {
            self.clone()
        };
        for _ in 0..k % 4 {
            let src = img;
            img = Image::from_fn(src.height, src.width, |r, c| {
                src.get(src.height - 1 - c, r)
            });
        }
        img
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Quantizes `[0, 1]` to 8 bits: clamp, scale by 255, round half to even.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                (v * 255.0).round_ties_even() as u8
            })
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        Image::from_vec(
            width,
            height,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    /// Reads an 8-bit PGM or PNG; color inputs are converted with luminance
    /// weights 0.299/0.587/0.114.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let dynimg = ::image::load_from_memory(&bytes)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        if dynimg.color().has_color() {
            let rgb8 = dynimg.to_rgb8();
            let data = rgb8
                .pixels()
                .map(|p| {
                    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
                })
                .collect();
            Image::from_vec(w, h, data)
        } else {
            let l = dynimg.to_luma8();
            Image::from_u8(w, h, l.as_raw())
        }
    }

    /// Writes PNG for a `.png` extension, binary PGM otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let buf = ::image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
                .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
            buf.save_with_format(path, ::image::ImageFormat::Png)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        } else {
            let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            out.extend(self.to_u8());
            std::fs::write(path, out)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dihedral_group() {
        let img = Image::from_fn(3, 2, |r, c| (r * 3 + c) as f64);
        let all: Vec<Image> = (0..8).map(|k| img.dihedral(k)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(img.dihedral(1).dihedral(3), img);
        assert_eq!(img.dihedral(2).get(0, 0), img.get(1, 2));
    }

    #[test]
    fn quantization_rounds_half_even() {
        let img = Image::from_vec(4, 1, vec![0.5 / 255.0, 1.5 / 255.0, -1.0, 2.0]).unwrap();
        // 0.5 and 1.5 are ties after scaling (up to representation error)
        let q = img.to_u8();
        assert!(q[0] <= 1 && q[1] == 2 && q[2] == 0 && q[3] == 255);
    }

    #[test]
    fn pgm_and_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |r, c| ((r * 5 + c) * 17 % 256) as f64 / 255.0);
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            let back = Image::load(&p).unwrap();
            assert_eq!(back.to_u8(), img.to_u8());
        }
    }

    #[test]
    fn color_png_uses_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let buf = ::image::RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap();
        buf.save(&p).unwrap();
        let img = Image::load(&p).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
    }
}
