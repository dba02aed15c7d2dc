//! Classical baselines: Wiener deconvolution and ADMM with anisotropic total
//! variation and a nonnegativity constraint.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{ConvolutionOperator, PseudoInverse};
use crate::tensor::ImageTensor;

/// Wiener deconvolution, gain `conj(H)/(|H|² + lambda_w)`.
pub fn wiener_reconstruct(
    op: &ConvolutionOperator,
    y: &ImageTensor,
    lambda_w: f64,
) -> Result<ImageTensor> {
    if !(lambda_w > 0.0) {
        return Err(Error::Parameter(format!(
            "lambda_w must be positive (use the spectral pseudo-inverse for exact inversion), got {lambda_w}"
        )));
    }
    PseudoInverse::wiener(op, lambda_w)?.apply(op, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    /// TV weight.
    pub tau: f64,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    pub iters: usize,
    /// Stop once the primal residual drops below this.
    pub tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            tau: 1e-2,
            rho: 1.0,
            iters: 100,
            tol: 0.0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Parameter("ADMM iters must be at least 1".into()));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Parameter(format!("ADMM rho must be positive, got {}", self.rho)));
        }
        if !(self.tau >= 0.0) || !(self.tol >= 0.0) {
            return Err(Error::Parameter("ADMM tau and tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    /// Nonnegative reconstruction (the clamped split variable).
    pub x: ImageTensor,
    /// Objective `‖y − Ax‖² + τ·TV(x)` of the reconstruction after each iteration.
    pub objective: Vec<f64>,
    /// `‖Kx − z‖₂` after each iteration.
    pub primal_residual: Vec<f64>,
}

/// Circular forward differences along rows (`dh`) and columns (`dv`).
fn diff_h(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = p[i * w + (j + 1) % w] - p[i * w + j];
        }
    }
    out
}

fn diff_v(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = p[((i + 1) % h) * w + j] - p[i * w + j];
        }
    }
    out
}

/// Anisotropic total variation with circular boundary, summed over channels.
pub fn total_variation(x: &ImageTensor) -> f64 {
    let (h, w) = (x.height(), x.width());
    (0..x.channels())
        .map(|c| {
            let p = x.channel_plane(c);
            diff_h(&p, h, w)
                .iter()
                .chain(diff_v(&p, h, w).iter())
                .map(|v| v.abs())
                .sum::<f64>()
        })
        .sum()
}

/// `‖y − Ax‖² + τ·TV(x)`.
pub fn tv_objective(op: &ConvolutionOperator, y: &ImageTensor, x: &ImageTensor, tau: f64) -> Result<f64> {
    let r = op.apply(x)?.sub(y)?;
    Ok(r.norm_sq() + tau * total_variation(x))
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// ADMM for `argmin_{x ≥ 0} ‖y − Ax‖² + τ(‖D_h x‖₁ + ‖D_v x‖₁)`.
///
/// Splitting `z = Kx` with `K = [D_h; D_v; I]` and one scaled dual per block.
/// The x-update is a per-bin division since `A`, `D_h`, `D_v` are circulant.
pub fn admm_tv_reconstruct(
    op: &ConvolutionOperator,
    y: &ImageTensor,
    cfg: &AdmmConfig,
) -> Result<AdmmResult> {
    cfg.validate()?;
    op.check(y, "admm_tv_reconstruct")?;
    let dims = op.dims();
    let (h, w, nc) = (dims.height, dims.width, dims.channels);
    let n = h * w;
    let fft = op.fft();
    let rho = cfg.rho;
    let thresh = cfg.tau / rho;

    // Transfer functions of the circular difference operators.
    let dh_f: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * (k % w) as f64 / w as f64) - 1.0)
        .collect();
    let dv_f: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * (k / w) as f64 / h as f64) - 1.0)
        .collect();

    struct Channel {
        hty2: Vec<Complex64>,
        denom: Vec<f64>,
        x: Vec<f64>,
        zh: Vec<f64>,
        zv: Vec<f64>,
        zp: Vec<f64>,
        uh: Vec<f64>,
        uv: Vec<f64>,
        up: Vec<f64>,
    }

    let mut chans: Vec<Channel> = (0..nc)
        .map(|c| {
            let hf = op.transfer(c);
            let yf = fft.forward_real(&y.channel_plane(c));
            let hty2 = hf.iter().zip(&yf).map(|(hv, yv)| 2.0 * hv.conj() * yv).collect();
            let denom = (0..n)
                .map(|k| 2.0 * hf[k].norm_sqr() + rho * (dh_f[k].norm_sqr() + dv_f[k].norm_sqr() + 1.0))
                .collect();
            Channel {
                hty2,
                denom,
                x: vec![0.0; n],
                zh: vec![0.0; n],
                zv: vec![0.0; n],
                zp: vec![0.0; n],
                uh: vec![0.0; n],
                uv: vec![0.0; n],
                up: vec![0.0; n],
            }
        })
        .collect();

    let initial = y.norm_sq();
    let limit = 1e6 * initial.max(f64::MIN_POSITIVE);
    let mut objective = Vec::with_capacity(cfg.iters);
    let mut primal = Vec::with_capacity(cfg.iters);
    let mut out = ImageTensor::zeros(dims)?;

    for it in 0..cfg.iters {
        let mut res_sq = 0.0;
        for ch in chans.iter_mut() {
            // x-update
            let sub = |z: &[f64], u: &[f64]| -> Vec<Complex64> {
                fft.forward_real(&z.iter().zip(u).map(|(a, b)| a - b).collect::<Vec<_>>())
            };
            let fh = sub(&ch.zh, &ch.uh);
            let fv = sub(&ch.zv, &ch.uv);
            let fp = sub(&ch.zp, &ch.up);
            let num: Vec<Complex64> = (0..n)
                .map(|k| {
                    (ch.hty2[k] + rho * (dh_f[k].conj() * fh[k] + dv_f[k].conj() * fv[k] + fp[k]))
                        / ch.denom[k]
                })
                .collect();
            ch.x = fft.inverse_real(num);

            // z- and u-updates
            let dxh = diff_h(&ch.x, h, w);
            let dxv = diff_v(&ch.x, h, w);
            for k in 0..n {
                ch.zh[k] = soft(dxh[k] + ch.uh[k], thresh);
                ch.zv[k] = soft(dxv[k] + ch.uv[k], thresh);
                ch.zp[k] = (ch.x[k] + ch.up[k]).max(0.0);
                let rh = dxh[k] - ch.zh[k];
                let rv = dxv[k] - ch.zv[k];
                let rp = ch.x[k] - ch.zp[k];
                ch.uh[k] += rh;
                ch.uv[k] += rv;
                ch.up[k] += rp;
                res_sq += rh * rh + rv * rv + rp * rp;
            }
        }
        let planes: Vec<Vec<f64>> = chans.iter().map(|ch| ch.zp.clone()).collect();
        out = ImageTensor::from_planes(h, w, &planes)?;
        out.ensure_finite("admm iterate")?;
        let obj = tv_objective(op, y, &out, cfg.tau)?;
        if !obj.is_finite() || obj > limit {
            return Err(Error::Divergence {
                iteration: it,
                objective: obj,
                limit,
            });
        }
        objective.push(obj);
        let res = res_sq.sqrt();
        primal.push(res);
        if res < cfg.tol {
            break;
        }
    }

    Ok(AdmmResult {
        x: out,
        objective,
        primal_residual: primal,
    })
}
