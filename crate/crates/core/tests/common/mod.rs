#![allow(dead_code)]

use lensless_core::psf::{synth_mask_psf, PsfSpec};
use lensless_core::{ConvolutionOperator, Dims, ImageTensor, Psf, SeededRng};

/// A 2×2 box: its transfer function vanishes on the Nyquist row and column.
pub fn box2() -> Psf {
    let k = ImageTensor::filled(Dims::new(2, 2, 1), 0.25).unwrap();
    Psf::new(k, true).unwrap()
}

/// Named PSFs covering invertible, ill-conditioned and rank-deficient cases.
pub fn test_psfs(height: usize, width: usize) -> Vec<(&'static str, Psf)> {
    let mut rng = SeededRng::new(11);
    vec![
        ("delta", Psf::delta()),
        ("box2", box2()),
        (
            "gaussian",
            synth_mask_psf(PsfSpec::GaussianBlob { width: 0.8 }, &mut rng, height, width).unwrap(),
        ),
        (
            "random_binary",
            synth_mask_psf(PsfSpec::RandomBinary { fill: 0.3 }, &mut rng, height, width).unwrap(),
        ),
        (
            "rings",
            synth_mask_psf(PsfSpec::default(), &mut rng, height, width).unwrap(),
        ),
    ]
}

pub fn operator(psf: &Psf, dims: Dims) -> ConvolutionOperator {
    ConvolutionOperator::new(psf, dims).unwrap()
}

pub fn random_image(dims: Dims, seed: u64) -> ImageTensor {
    let mut rng = SeededRng::new(seed);
    ImageTensor::from_fn(dims, |_, _, _| rng.uniform()).unwrap()
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}
