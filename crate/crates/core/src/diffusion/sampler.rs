use super::prior::DenoiserPrior;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{gaussian_noise, SeededRng};
use crate::tensor::{Dims, ImageTensor};

/// `x_t = √ᾱ_t x₀ + √(1 − ᾱ_t) ε`.
pub fn forward_noise(
    sched: &NoiseSchedule,
    x0: &ImageTensor,
    t: usize,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    sched.check_t(t)?;
    let eps = gaussian_noise(rng, x0.dims(), 1.0)?;
    x0.scale(sched.alpha_bar(t).sqrt())
        .axpy(sched.marginal_std(t), &eps)
}

/// One reverse step `x_{t−1} ~ N(a_t x̂₀ + b_t x_t, Φ_t I)`.
///
/// `phi = None` uses the DDPM posterior variance `β̃_t`. A full noise tensor
/// is always drawn, so the stream position depends only on the step count.
pub fn ancestral_step(
    sched: &NoiseSchedule,
    x_t: &ImageTensor,
    x0: &ImageTensor,
    t: usize,
    rng: &mut SeededRng,
    phi: Option<f64>,
) -> Result<ImageTensor> {
    sched.check_t(t)?;
    let phi = phi.unwrap_or_else(|| sched.posterior_variance(t));
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::Parameter(format!(
            "resampling variance must be nonnegative, got {phi} at t={t}"
        )));
    }
    let noise = gaussian_noise(rng, x_t.dims(), 1.0)?;
    let (a, b, s) = (sched.a(t), sched.b(t), phi.sqrt());
    let mean = x0.scale(a).axpy(b, x_t)?;
    let next = mean.axpy(s, &noise)?;
    next.ensure_finite("ancestral step")?;
    Ok(next)
}

/// Unconditional DDPM sampling from `x_T ~ N(0, I)`.
pub fn sample_unconditional(
    prior: &dyn DenoiserPrior,
    sched: &NoiseSchedule,
    dims: Dims,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    let mut x = gaussian_noise(rng, dims, 1.0)?;
    for t in (1..=sched.steps()).rev() {
        let x0 = prior.posterior_mean(sched, &x, t)?;
        x = ancestral_step(sched, &x, &x0, t, rng, None)?;
    }
    Ok(x)
}
