use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    LinearBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    /// 100 steps with the 1000-step DDPM range `1e-4..0.02` scaled by 10,
    /// so `ᾱ_T` still reaches ~1e-4.
    fn default() -> Self {
        Self {
            kind: ScheduleKind::LinearBeta,
            steps: 100,
            beta_min: 1e-3,
            beta_max: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

/// DDPM noise schedule, indexed by `t = 0..=T` with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let ScheduleKind::LinearBeta = kind;
        let mut beta = vec![0.0; steps + 1];
        for (t, b) in beta.iter_mut().enumerate().skip(1) {
            *b = if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (t - 1) as f64 / (steps - 1) as f64
            };
        }
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        Ok(Self {
            steps,
            beta,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `√(1 − ᾱ_t)`, the standard deviation of the forward marginal noise.
    pub fn marginal_std(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `β̃_t = (1 − ᾱ_{t−1}) β_t / (1 − ᾱ_t)`, the variance of `q(x_{t−1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t - 1]) * self.beta[t] / (1.0 - self.alpha_bar[t])
    }

    /// `√β̃_t`: the per-step noise level DDNM+ balances against `σ_y`.
    pub fn posterior_std(&self, t: usize) -> f64 {
        self.posterior_variance(t).sqrt()
    }

    /// `a_t = √ᾱ_{t−1} β_t / (1 − ᾱ_t)`, the weight of `x̂₀` in the posterior mean.
    pub fn a(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1].sqrt() * self.beta[t] / (1.0 - self.alpha_bar[t])
    }

    /// `√α_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`, the weight of `x_t` in the posterior mean.
    pub fn b(&self, t: usize) -> f64 {
        self.alpha(t).sqrt() * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Parameter(format!(
                "timestep {t} outside 1..={}",
                self.steps
            )));
        }
        Ok(())
    }
}
