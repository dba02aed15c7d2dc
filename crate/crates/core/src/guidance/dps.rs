use serde::{Deserialize, Serialize};

use super::trace::{GuidanceTrace, TraceRecord};
use crate::diffusion::{ancestral_step, DenoiserPrior, NoiseSchedule};
use crate::error::{Error, Result};
use crate::operator::ConvolutionOperator;
use crate::rng::{gaussian_noise, SeededRng};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpsConfig {
    /// Constant guidance step size.
    pub zeta: f64,
    /// Treat the score as constant when differentiating `x̂₀(x_t)`, giving
    /// `J = I/√ᾱ_t` instead of the exact Jacobian.
    pub stop_gradient: bool,
}

impl Default for DpsConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            stop_gradient: false,
        }
    }
}

/// `∇_{x_t} ‖y − A x̂₀(x_t)‖²` at timestep `t`, together with `x̂₀` and the
/// residual norm.
pub fn dps_guidance_gradient(
    op: &ConvolutionOperator,
    y: &ImageTensor,
    prior: &dyn DenoiserPrior,
    sched: &NoiseSchedule,
    x_t: &ImageTensor,
    t: usize,
    stop_gradient: bool,
) -> Result<(ImageTensor, ImageTensor, f64)> {
    let (x0, pull) = prior.posterior_mean_with_pullback(sched, x_t, t)?;
    let r = op.apply(&x0)?.sub(y)?;
    let g_x0 = op.adjoint(&r)?.scale(2.0);
    let g = if stop_gradient {
        g_x0.scale(1.0 / sched.alpha_bar(t).sqrt())
    } else {
        pull.apply(&g_x0)?
    };
    Ok((g, x0, r.norm()))
}

/// Diffusion posterior sampling: ancestral step, then subtract `ζ·g`.
pub fn dps_reconstruct(
    op: &ConvolutionOperator,
    y: &ImageTensor,
    prior: &dyn DenoiserPrior,
    sched: &NoiseSchedule,
    cfg: &DpsConfig,
    rng: &mut SeededRng,
) -> Result<(ImageTensor, GuidanceTrace)> {
    if !(cfg.zeta >= 0.0) || !cfg.zeta.is_finite() {
        return Err(Error::Parameter(format!("zeta must be nonnegative, got {}", cfg.zeta)));
    }
    op.check(y, "dps_reconstruct")?;
    let mut x = gaussian_noise(rng, op.dims(), 1.0)?;
    let mut trace = GuidanceTrace::default();
    for t in (1..=sched.steps()).rev() {
        let (x0, grad, residual) = if cfg.zeta == 0.0 {
            let x0 = prior.posterior_mean(sched, &x, t)?;
            let residual = op.apply(&x0)?.sub(y)?.norm();
            (x0, None, residual)
        } else {
            let (g, x0, residual) =
                dps_guidance_gradient(op, y, prior, sched, &x, t, cfg.stop_gradient)?;
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite DPS gradient at step t={t}")));
            }
            (x0, Some(g), residual)
        };
        let next = ancestral_step(sched, &x, &x0, t, rng, None)?;
        x = match grad {
            Some(g) => next.axpy(-cfg.zeta, &g)?,
            None => next,
        };
        x.ensure_finite(&format!("DPS iterate at t={t}"))?;
        trace.push(TraceRecord {
            t,
            residual,
            lambda: cfg.zeta,
            phi: sched.posterior_variance(t),
        });
    }
    Ok((x, trace))
}
