use serde::{Deserialize, Serialize};

use super::trace::{GuidanceTrace, TraceRecord};
use crate::diffusion::{ancestral_step, DenoiserPrior, NoiseSchedule};
use crate::error::{Error, Result};
use crate::operator::{ConvolutionOperator, PseudoInverse};
use crate::rng::{gaussian_noise, SeededRng};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DdnmMode {
    /// Hard range replacement `A†y + (I − A†A) x̂₀`; ignores `sigma_y`.
    Exact,
    /// Noise-aware relaxed correction with matched resampling variance.
    #[default]
    Relaxed,
}

/// How `sigma_y` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaYScale {
    /// Used as given, on the scale of `x̂₀`.
    #[default]
    Raw,
    /// Measurement-domain noise std, multiplied by the RMS gain of `A†`.
    Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdnmConfig {
    pub sigma_y: f64,
    pub mode: DdnmMode,
    pub sigma_y_scale: SigmaYScale,
}

impl Default for DdnmConfig {
    fn default() -> Self {
        Self {
            sigma_y: 0.6,
            mode: DdnmMode::Relaxed,
            sigma_y_scale: SigmaYScale::Raw,
        }
    }
}

impl DdnmConfig {
    pub fn exact() -> Self {
        Self {
            sigma_y: 0.0,
            mode: DdnmMode::Exact,
            ..Self::default()
        }
    }

    pub fn relaxed(sigma_y: f64) -> Self {
        Self {
            sigma_y,
            ..Self::default()
        }
    }

    /// Noise level entering the λ_t rule for this pseudo-inverse.
    pub fn effective_sigma_y(&self, pinv: &PseudoInverse) -> f64 {
        match (self.mode, self.sigma_y_scale) {
            (DdnmMode::Exact, _) => 0.0,
            (DdnmMode::Relaxed, SigmaYScale::Raw) => self.sigma_y,
            (DdnmMode::Relaxed, SigmaYScale::Measurement) => self.sigma_y * pinv.gain_rms(),
        }
    }
}

/// `(λ_t, Φ_t)` for noise level `sigma_y`.
///
/// `σ_t` is the DDPM posterior std `√β̃_t`. When `σ_t ≥ a_t σ_y`, `λ_t = 1`
/// and `Φ_t = σ_t² − (a_t σ_y)²`; otherwise `λ_t = σ_t/(a_t σ_y)`, for which
/// `a_t λ_t σ_y = σ_t` and `Φ_t = 0`. `a_t σ_y = 0` always takes the first
/// branch.
pub fn ddnm_plus_coefficients(sched: &NoiseSchedule, t: usize, sigma_y: f64) -> Result<(f64, f64)> {
    sched.check_t(t)?;
    if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
        return Err(Error::Parameter(format!("sigma_y must be nonnegative, got {sigma_y}")));
    }
    let sigma_t = sched.posterior_std(t);
    let scaled = sched.a(t) * sigma_y;
    if sigma_t >= scaled {
        Ok((1.0, (sched.posterior_variance(t) - scaled * scaled).max(0.0)))
    } else {
        Ok((sigma_t / scaled, 0.0))
    }
}

/// `x̂₀' = A†y + (I − A†A) x̂₀`.
pub fn ddnm_update(
    pinv: &PseudoInverse,
    op: &ConvolutionOperator,
    x0: &ImageTensor,
    y: &ImageTensor,
) -> Result<ImageTensor> {
    pinv.relaxed_correction(op, x0, y, 1.0)
}

/// `x̂₀' = x̂₀ − λ_t A†(A x̂₀ − y)`, returning `(x̂₀', λ_t, Φ_t)`.
pub fn ddnm_plus_update(
    pinv: &PseudoInverse,
    op: &ConvolutionOperator,
    sched: &NoiseSchedule,
    x0: &ImageTensor,
    y: &ImageTensor,
    t: usize,
    sigma_y: f64,
) -> Result<(ImageTensor, f64, f64)> {
    let (lambda, phi) = ddnm_plus_coefficients(sched, t, sigma_y)?;
    let x0p = pinv.relaxed_correction(op, x0, y, lambda)?;
    Ok((x0p, lambda, phi))
}

/// DDNM / DDNM+ sampling from `x_T ~ N(0, I)` drawn from `rng`.
pub fn ddnm_reconstruct(
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    y: &ImageTensor,
    prior: &dyn DenoiserPrior,
    sched: &NoiseSchedule,
    cfg: &DdnmConfig,
    rng: &mut SeededRng,
) -> Result<(ImageTensor, GuidanceTrace)> {
    op.check(y, "ddnm_reconstruct")?;
    let sigma_y = cfg.effective_sigma_y(pinv);
    let mut x = gaussian_noise(rng, op.dims(), 1.0)?;
    let mut trace = GuidanceTrace::default();
    for t in (1..=sched.steps()).rev() {
        let x0 = prior.posterior_mean(sched, &x, t)?;
        let (x0p, lambda, phi) = ddnm_plus_update(pinv, op, sched, &x0, y, t, sigma_y)?;
        let residual = op.apply(&x0p)?.sub(y)?.norm();
        x = ancestral_step(sched, &x, &x0p, t, rng, Some(phi))?;
        trace.push(TraceRecord {
            t,
            residual,
            lambda,
            phi,
        });
    }
    Ok((x, trace))
}
