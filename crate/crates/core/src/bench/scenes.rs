use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::ConvolutionOperator;
use crate::rng::{gaussian_noise, SeededRng};
use crate::tensor::{Dims, ImageTensor};

/// Synthetic scene families, all with values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// A random background with a few overlapping axis-aligned rectangles.
    PiecewiseConstant {
        #[serde(default = "default_rects")]
        rects: usize,
    },
    /// Planar ramps plus one low-frequency cosine.
    SmoothGradients,
    /// Each pixel lit with probability `density`.
    SparseDots {
        #[serde(default = "default_density")]
        density: f64,
    },
    /// Two-level checkerboard with random cell size and phase.
    Checkerboard,
}

fn default_rects() -> usize {
    4
}

fn default_density() -> f64 {
    0.05
}

impl Default for SceneKind {
    fn default() -> Self {
        SceneKind::PiecewiseConstant { rects: 4 }
    }
}

impl SceneKind {
    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::PiecewiseConstant { .. } => "piecewise_constant",
            SceneKind::SmoothGradients => "smooth_gradients",
            SceneKind::SparseDots { .. } => "sparse_dots",
            SceneKind::Checkerboard => "checkerboard",
        }
    }
}

fn one_scene(kind: SceneKind, rng: &mut SeededRng, dims: Dims) -> Result<ImageTensor> {
    let (h, w, c) = (dims.height, dims.width, dims.channels);
    let mut data = vec![0.0; dims.len()];
    match kind {
        SceneKind::PiecewiseConstant { rects } => {
            let bg: Vec<f64> = (0..c).map(|_| rng.uniform()).collect();
            for p in 0..h * w {
                data[p * c..(p + 1) * c].copy_from_slice(&bg);
            }
            for _ in 0..rects {
                let (i0, j0) = (rng.below(h), rng.below(w));
                let rh = 1 + rng.below(h.div_ceil(2));
                let rw = 1 + rng.below(w.div_ceil(2));
                let v: Vec<f64> = (0..c).map(|_| rng.uniform()).collect();
                for i in i0..(i0 + rh).min(h) {
                    for j in j0..(j0 + rw).min(w) {
                        let p = i * w + j;
                        data[p * c..(p + 1) * c].copy_from_slice(&v);
                    }
                }
            }
        }
        SceneKind::SmoothGradients => {
            for k in 0..c {
                let a = rng.uniform_range(0.2, 0.8);
                let (gi, gj) = (rng.uniform_range(-0.4, 0.4), rng.uniform_range(-0.4, 0.4));
                let amp = rng.uniform_range(0.0, 0.2);
                let (fi, fj) = (rng.uniform_range(0.5, 2.0), rng.uniform_range(0.5, 2.0));
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                for i in 0..h {
                    for j in 0..w {
                        let (u, v) = (i as f64 / h as f64, j as f64 / w as f64);
                        let val = a
                            + gi * (u - 0.5)
                            + gj * (v - 0.5)
                            + amp * (std::f64::consts::TAU * (fi * u + fj * v) + phase).cos();
                        data[(i * w + j) * c + k] = val.clamp(0.0, 1.0);
                    }
                }
            }
        }
        SceneKind::SparseDots { density } => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::Parameter(format!("dot density must be in [0, 1], got {density}")));
            }
            for p in 0..h * w {
                if rng.bernoulli(density) {
                    for k in 0..c {
                        data[p * c + k] = rng.uniform_range(0.5, 1.0);
                    }
                }
            }
        }
        SceneKind::Checkerboard => {
            let cell = 2 + rng.below(4);
            let (oi, oj) = (rng.below(cell), rng.below(cell));
            let lo: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.0, 0.4)).collect();
            let hi: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.6, 1.0)).collect();
            for i in 0..h {
                for j in 0..w {
                    let on = ((i + oi) / cell + (j + oj) / cell) % 2 == 1;
                    let v = if on { &hi } else { &lo };
                    let p = i * w + j;
                    data[p * c..(p + 1) * c].copy_from_slice(v);
                }
            }
        }
    }
    ImageTensor::new(dims, data)
}

/// `n` scenes, scene `i` drawn from child stream `i` of `rng`.
pub fn synth_scenes(kind: SceneKind, n: usize, rng: &SeededRng, dims: Dims) -> Result<Vec<ImageTensor>> {
    if n == 0 {
        return Err(Error::Parameter("scene count must be at least 1".into()));
    }
    dims.validate()?;
    (0..n)
        .map(|i| one_scene(kind, &mut rng.child(i as u64), dims))
        .collect()
}

/// `y = A x + n` with `n ~ N(0, σ_n² I)`.
pub fn simulate_capture(
    op: &ConvolutionOperator,
    scene: &ImageTensor,
    sigma_n: f64,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    let clean = op.apply(scene)?;
    if sigma_n == 0.0 {
        return Ok(clean);
    }
    clean.add(&gaussian_noise(rng, scene.dims(), sigma_n)?)
}
