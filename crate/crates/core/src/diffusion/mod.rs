//! Discrete DDPM machinery: schedules, posterior-mean estimates, ancestral
//! sampling and denoiser priors.

mod prior;
mod sampler;
mod schedule;
mod train;

pub(crate) use prior::sha2_hex;
pub use prior::{
    posterior_mean_from_score, score_from_posterior_mean, DenoiserPrior, GaussianPrior,
    LearnedDenoiser, Pullback,
};
pub use sampler::{ancestral_step, forward_noise, sample_unconditional};
pub use schedule::{NoiseSchedule, ScheduleConfig, ScheduleKind};
pub use train::{denoising_mse, train_denoiser, DenoiserTrainConfig, DenoiserTrainReport};
