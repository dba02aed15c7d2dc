use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prior::{DenoiserPrior, LearnedDenoiser};
use super::sampler::forward_noise;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Network};
use crate::parallel::{self, Exec};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserTrainReport {
    /// Mean x̂₀ MSE over each epoch's minibatches.
    pub epoch_loss: Vec<f64>,
}

impl DenoiserTrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["epoch", "loss"]).map_err(|e| Error::io(path, e.into()))?;
        for (e, l) in self.epoch_loss.iter().enumerate() {
            w.write_record([(e + 1).to_string(), format!("{l:.17e}")])
                .map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains an `x̂₀` predictor on `scenes` with uniformly drawn timesteps.
///
/// Per-sample noise streams are derived from `(epoch, position)`, and batch
/// gradients are summed in sample order, so the result does not depend on
/// the execution policy.
pub fn train_denoiser(
    net: Network,
    scenes: &[ImageTensor],
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
    cfg: &DenoiserTrainConfig,
    exec: Exec,
) -> Result<(LearnedDenoiser, DenoiserTrainReport)> {
    if scenes.is_empty() {
        return Err(Error::Parameter("denoiser training needs a nonempty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut model = LearnedDenoiser::new(net)?;
    let mut params = model.net.params();
    let mut adam = AdamState::new(cfg.adam, params.len())?;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let epoch_rng = rng.child(epoch as u64);
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = parallel::try_map_indexed(exec, batch.len(), |k| {
                let mut r = epoch_rng.child((b * cfg.batch_size + k) as u64);
                let x0 = &scenes[batch[k]];
                let t = 1 + r.below(sched.steps());
                let x_t = forward_noise(sched, x0, t, &mut r)?;
                let z = model.network_input(sched, &x_t, t)?;
                let (out, cache) = model.net.forward_cached(&z)?;
                let pred = out.axpy(sched.alpha_bar(t).sqrt(), &x_t)?;
                let diff = pred.sub(x0)?;
                let n = diff.len() as f64;
                let loss = diff.norm_sq() / n;
                let g = model.net.backward(&cache, &diff.scale(2.0 / n))?;
                Ok::<_, Error>((loss, g.params))
            })?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                total += loss;
                count += 1;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            adam.step(&mut params, &grad)?;
            model.net.set_params(&params)?;
        }
        let mean = total / count as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("denoiser loss diverged in epoch {}", epoch + 1)));
        }
        epoch_loss.push(mean);
    }
    Ok((model, DenoiserTrainReport { epoch_loss }))
}

/// Mean x̂₀ MSE of `prior` at timestep `t` over `scenes`, one noise draw each.
pub fn denoising_mse(
    prior: &dyn DenoiserPrior,
    sched: &NoiseSchedule,
    scenes: &[ImageTensor],
    t: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut total = 0.0;
    for x0 in scenes {
        let x_t = forward_noise(sched, x0, t, rng)?;
        total += prior.posterior_mean(sched, &x_t, t)?.mse(x0)?;
    }
    Ok(total / scenes.len() as f64)
}
