use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::{Dims, ImageTensor};

/// `x̂₀ = (x_t + (1 − ᾱ_t)·score) / √ᾱ_t`.
pub fn posterior_mean_from_score(
    sched: &NoiseSchedule,
    x_t: &ImageTensor,
    score: &ImageTensor,
    t: usize,
) -> Result<ImageTensor> {
    let ab = sched.alpha_bar(t);
    let s = ab.sqrt();
    x_t.zip_map(score, |x, sc| (x + (1.0 - ab) * sc) / s)
}

/// Inverse of [`posterior_mean_from_score`].
pub fn score_from_posterior_mean(
    sched: &NoiseSchedule,
    x_t: &ImageTensor,
    x0: &ImageTensor,
    t: usize,
) -> Result<ImageTensor> {
    let ab = sched.alpha_bar(t);
    let s = ab.sqrt();
    x_t.zip_map(x0, |x, m| (s * m - x) / (1.0 - ab))
}

/// Vector–Jacobian product of a prior's `x̂₀(x_t)` map at one point.
pub enum Pullback<'a> {
    /// `J = k·I`.
    Scalar(f64),
    Closure(Box<dyn Fn(&ImageTensor) -> Result<ImageTensor> + 'a>),
}

impl Pullback<'_> {
    /// `Jᵀ v`.
    pub fn apply(&self, v: &ImageTensor) -> Result<ImageTensor> {
        match self {
            Pullback::Scalar(k) => Ok(v.scale(*k)),
            Pullback::Closure(f) => f(v),
        }
    }
}

/// A denoising prior usable by the guided samplers.
pub trait DenoiserPrior: Send + Sync {
    fn name(&self) -> &str;

    /// `x̂_{0|t}`, the posterior-mean estimate of the clean image.
    fn posterior_mean(&self, sched: &NoiseSchedule, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;

    /// `∇ log p_t(x_t)`; by default recovered from the posterior mean.
    fn score(&self, sched: &NoiseSchedule, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let x0 = self.posterior_mean(sched, x_t, t)?;
        score_from_posterior_mean(sched, x_t, &x0, t)
    }

    /// Posterior mean together with the pullback of its Jacobian.
    fn posterior_mean_with_pullback<'a>(
        &'a self,
        sched: &NoiseSchedule,
        x_t: &ImageTensor,
        t: usize,
    ) -> Result<(ImageTensor, Pullback<'a>)>;

    /// Content fingerprint used in cache hashes.
    fn fingerprint(&self) -> String;
}

/// Analytic prior `x₀ ~ N(μ₀, v₀ I)`. Its noisy marginals are
/// `p_t = N(√ᾱ_t μ₀, (ᾱ_t v₀ + 1 − ᾱ_t) I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: ImageTensor,
    pub variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: ImageTensor, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Parameter(format!(
                "prior variance must be finite and nonnegative, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn isotropic(dims: Dims, mean: f64, variance: f64) -> Result<Self> {
        Self::new(ImageTensor::filled(dims, mean)?, variance)
    }

    fn marginal_variance(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        let ab = sched.alpha_bar(t);
        ab * self.variance + 1.0 - ab
    }

    /// `dx̂₀/dx_t = √ᾱ_t v₀ / (ᾱ_t v₀ + 1 − ᾱ_t)`.
    pub fn gain(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        sched.alpha_bar(t).sqrt() * self.variance / self.marginal_variance(sched, t)
    }
}

impl DenoiserPrior for GaussianPrior {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn posterior_mean(&self, sched: &NoiseSchedule, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        sched.check_t(t)?;
        let s = sched.alpha_bar(t).sqrt();
        let k = self.gain(sched, t);
        self.mean.zip_map(x_t, |m, x| m + k * (x - s * m))
    }

    fn score(&self, sched: &NoiseSchedule, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        sched.check_t(t)?;
        let s = sched.alpha_bar(t).sqrt();
        let var = self.marginal_variance(sched, t);
        self.mean.zip_map(x_t, |m, x| -(x - s * m) / var)
    }

    fn posterior_mean_with_pullback<'a>(
        &'a self,
        sched: &NoiseSchedule,
        x_t: &ImageTensor,
        t: usize,
    ) -> Result<(ImageTensor, Pullback<'a>)> {
        Ok((
            self.posterior_mean(sched, x_t, t)?,
            Pullback::Scalar(self.gain(sched, t)),
        ))
    }

    fn fingerprint(&self) -> String {
        let mut s = format!("gaussian;v0={:016x};", self.variance.to_bits());
        for v in self.mean.as_slice() {
            s.push_str(&format!("{:016x}", v.to_bits()));
        }
        s
    }
}

/// Learned `x̂₀` predictor. The network sees `x_t` concatenated with a
/// constant channel holding `√(1 − ᾱ_t)` and predicts a correction on top of
/// `√ᾱ_t · x_t`:
///
/// `x̂₀ = √ᾱ_t x_t + net(concat(x_t, σ_t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDenoiser {
    pub net: Network,
    channels: usize,
}

impl LearnedDenoiser {
    pub fn new(net: Network) -> Result<Self> {
        let c = net.input_channels().checked_sub(1).filter(|&c| c > 0).ok_or_else(|| {
            Error::Shape {
                layer: 0,
                message: "denoiser network needs C+1 input channels".into(),
            }
        })?;
        let out = net.output_dims(Dims::new(4, 4, c + 1))?;
        if out.channels != c {
            return Err(Error::Shape {
                layer: net.layers().len().saturating_sub(1),
                message: format!("denoiser outputs {} channels, expected {c}", out.channels),
            });
        }
        Ok(Self { net, channels: c })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub(crate) fn network_input(
        &self,
        sched: &NoiseSchedule,
        x_t: &ImageTensor,
        t: usize,
    ) -> Result<ImageTensor> {
        sched.check_t(t)?;
        if x_t.channels() != self.channels {
            return Err(Error::Shape {
                layer: 0,
                message: format!("denoiser expects {} channels, got {}", self.channels, x_t.channels()),
            });
        }
        let sigma = ImageTensor::filled(x_t.dims().with_channels(1), sched.marginal_std(t))?;
        x_t.concat_channels(&sigma)
    }
}

impl DenoiserPrior for LearnedDenoiser {
    fn name(&self) -> &str {
        "learned"
    }

    fn posterior_mean(&self, sched: &NoiseSchedule, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let z = self.network_input(sched, x_t, t)?;
        let out = self.net.forward(&z)?;
        out.axpy(sched.alpha_bar(t).sqrt(), x_t)
    }

    fn posterior_mean_with_pullback<'a>(
        &'a self,
        sched: &NoiseSchedule,
        x_t: &ImageTensor,
        t: usize,
    ) -> Result<(ImageTensor, Pullback<'a>)> {
        let z = self.network_input(sched, x_t, t)?;
        let (out, cache) = self.net.forward_cached(&z)?;
        let s = sched.alpha_bar(t).sqrt();
        let x0 = out.axpy(s, x_t)?;
        let c = self.channels;
        let pull = move |v: &ImageTensor| -> Result<ImageTensor> {
            let g = self.net.backward(&cache, v)?;
            g.input.slice_channels(0, c)?.axpy(s, v)
        };
        Ok((x0, Pullback::Closure(Box::new(pull))))
    }

    fn fingerprint(&self) -> String {
        let mut h = sha2_hex(self.net.params().iter().flat_map(|v| v.to_le_bytes()));
        h.insert_str(0, "learned;");
        h
    }
}

pub(crate) fn sha2_hex(bytes: impl IntoIterator<Item = u8>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let buf: Vec<u8> = bytes.into_iter().collect();
    hasher.update(&buf);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
