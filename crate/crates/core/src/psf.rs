//! Synthetic mask PSFs for desk-scale experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::Psf;
use crate::rng::SeededRng;
use crate::tensor::{Dims, ImageTensor};

/// Synthetic PSF families. All kernels are single-channel, image-sized,
/// centered at `(H/2, W/2)` and normalized to unit sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsfSpec {
    /// Unit impulse.
    Delta,
    /// I.i.d. binary pixels with probability `fill` of being open.
    RandomBinary { fill: f64 },
    /// Concentric binary rings: a pixel at radius `r` is open when
    /// `frac(r / period) < duty`. Support is limited to `r < min(H, W)/2`.
    RadialRings { period: f64, duty: f64 },
    /// Isotropic Gaussian of standard deviation `width` pixels.
    GaussianBlob { width: f64 },
    /// Uniform box of the given size, anchored at the center.
    Box { height: usize, width: usize },
}

impl Default for PsfSpec {
    fn default() -> Self {
        PsfSpec::RadialRings {
            period: 3.0,
            duty: 0.5,
        }
    }
}

fn radius(i: usize, j: usize, h: usize, w: usize) -> f64 {
    let di = i as f64 - (h / 2) as f64;
    let dj = j as f64 - (w / 2) as f64;
    (di * di + dj * dj).sqrt()
}

/// Generates a PSF of spatial size `height × width`.
pub fn synth_mask_psf(spec: PsfSpec, rng: &mut SeededRng, height: usize, width: usize) -> Result<Psf> {
    let dims = Dims::new(height, width, 1);
    dims.validate()?;
    let (h, w) = (height, width);
    let kernel = match spec {
        PsfSpec::Delta => return Ok(Psf::delta()),
        PsfSpec::RandomBinary { fill } => {
            if !(fill > 0.0 && fill <= 1.0) {
                return Err(Error::Parameter(format!(
                    "random_binary fill must be in (0, 1], got {fill}"
                )));
            }
            let mut data: Vec<f64> = (0..h * w)
                .map(|_| if rng.bernoulli(fill) { 1.0 } else { 0.0 })
                .collect();
            if data.iter().all(|&v| v == 0.0) {
                data[(h / 2) * w + w / 2] = 1.0;
            }
            ImageTensor::new(dims, data)?
        }
        PsfSpec::RadialRings { period, duty } => {
            if !(period > 0.0) || !(duty > 0.0 && duty < 1.0) {
                return Err(Error::Parameter(format!(
                    "radial_rings needs period > 0 and duty in (0, 1), got {period}, {duty}"
                )));
            }
            let rmax = (h.min(w) / 2) as f64;
            ImageTensor::from_fn(dims, |i, j, _| {
                let r = radius(i, j, h, w);
                if r < rmax && (r / period).fract() < duty {
                    1.0
                } else {
                    0.0
                }
            })?
        }
        PsfSpec::GaussianBlob { width: s } => {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Parameter(format!(
                    "gaussian_blob width must be positive, got {s}"
                )));
            }
            ImageTensor::from_fn(dims, |i, j, _| {
                let r = radius(i, j, h, w);
                (-r * r / (2.0 * s * s)).exp()
            })?
        }
        PsfSpec::Box {
            height: bh,
            width: bw,
        } => {
            if bh == 0 || bw == 0 || bh > h || bw > w {
                return Err(Error::Parameter(format!(
                    "box {bh}x{bw} must be nonempty and fit in {h}x{w}"
                )));
            }
            ImageTensor::filled(Dims::new(bh, bw, 1), 1.0)?
        }
    };
    Psf::new(kernel, true)
}
