use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::ConvolutionOperator;
use crate::tensor::ImageTensor;

const PEAK: f64 = 1.0;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// `+∞` for a perfect reconstruction.
    pub psnr: f64,
    pub ssim: f64,
    /// `‖A x̂ − y‖₂`.
    pub residual: f64,
}

pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

/// Formats a metric for CSV; infinities print as `inf`.
pub fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.17e}")
    }
}

/// Normalized Gaussian window of odd size `n`, std 1.5.
fn gaussian_window(n: usize) -> Vec<f64> {
    let r = (n / 2) as f64;
    let g: Vec<f64> = (0..n)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let mut w = Vec::with_capacity(n * n);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Window size: 11, or the largest odd size that fits.
pub fn ssim_window_size(height: usize, width: usize) -> usize {
    let m = height.min(width).min(11);
    if m % 2 == 0 { m - 1 } else { m }
}

/// Mean SSIM over all fully contained windows and all channels.
pub fn ssim(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    x.check_same_dims(reference, "ssim")?;
    let (h, w) = (x.height(), x.width());
    let n = ssim_window_size(h, w);
    if n == 0 {
        return Err(Error::Dimension("image too small for SSIM".into()));
    }
    let win = gaussian_window(n);
    let (c1, c2) = ((K1 * PEAK).powi(2), (K2 * PEAK).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..x.channels() {
        let a = x.channel_plane(c);
        let b = reference.channel_plane(c);
        for i0 in 0..=h - n {
            for j0 in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..n {
                    for dj in 0..n {
                        let wt = win[di * n + dj];
                        let p = (i0 + di) * w + j0 + dj;
                        ma += wt * a[p];
                        mb += wt * b[p];
                        saa += wt * a[p] * a[p];
                        sbb += wt * b[p] * b[p];
                        sab += wt * a[p] * b[p];
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// MSE, PSNR and SSIM against `reference`, plus the data residual.
pub fn compute_metrics(
    x: &ImageTensor,
    reference: &ImageTensor,
    op: &ConvolutionOperator,
    y: &ImageTensor,
) -> Result<Metrics> {
    let mse = x.mse(reference)?;
    Ok(Metrics {
        mse,
        psnr: psnr(mse),
        ssim: ssim(x, reference)?,
        residual: op.apply(x)?.sub(y)?.norm(),
    })
}
