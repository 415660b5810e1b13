//! Products of one-dimensional Gaussian-mixture experts whose densities
//! diffuse in closed form.
//!
//! Three priors share one backbone ([`experts::GmmExpert`]): a patch model
//! over orthogonal zero-mean filters ([`patch`]), a wavelet model over a
//! learnable orthonormal DWT ([`wavelet`]), and a convolutional model over
//! an FFT-domain shearlet system ([`shearlet`]). In each, diffusing the
//! density by time `t` only changes the expert variances
//! `sigma^2(t) = sigma0^2 + 2 t c`, which gives exact scores at every noise
//! level for empirical Bayes denoising, noise estimation, and sampling.

// NaN-rejecting `!(x > 0.0)` checks and index loops over parallel arrays are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod archive;
pub mod config;
pub mod error;
pub mod experts;
pub(crate) mod fft;
pub mod image;
pub mod inference;
pub mod mathkit;
pub mod model;
pub mod patch;
pub mod shearlet;
pub mod synth;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use image::Image;
pub use model::{Model, ModelKind};
