//! Lensless camera reconstruction at desk scale.
//!
//! The crate provides a circulant forward model with exact spectral
//! pseudo-inverse and range/null projectors, classical baselines (Wiener and
//! ADMM with total variation), DDPM machinery with analytic and learned
//! priors, DPS and DDNM/DDNM+ guided samplers, and null-space distillation of
//! a DDNM+ teacher into a single-pass student network.

pub mod bench;
pub mod classical;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod fft;
pub mod guidance;
pub mod io;
pub mod nn;
pub mod operator;
pub mod parallel;
pub mod psf;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use operator::{ConvolutionOperator, PinvMode, Psf, PseudoInverse};
pub use parallel::Exec;
pub use rng::{gaussian_noise, SeededRng};
pub use tensor::{Dims, ImageTensor};
