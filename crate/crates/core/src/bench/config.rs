use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenes::SceneKind;
use crate::classical::AdmmConfig;
use crate::diffusion::{
    train_denoiser, DenoiserPrior, DenoiserTrainConfig, GaussianPrior, ScheduleConfig,
};
use crate::distill::{StudentTrainConfig, TeacherConfig, TimestepTag};
use crate::error::{Error, Result};
use crate::guidance::{DdnmConfig, DdnmMode, DpsConfig, SigmaYScale};
use crate::nn::{AdamConfig, Network};
use crate::operator::{ConvolutionOperator, PinvMode, PseudoInverse, DEFAULT_LAMBDA_W, DEFAULT_SPECTRAL_REL_EPS};
use crate::parallel::Exec;
use crate::psf::PsfSpec;
use crate::rng::SeededRng;
use crate::tensor::Dims;

use super::scenes::synth_scenes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(flatten)]
    pub kind: SceneKind,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_count() -> usize {
    8
}

fn default_side() -> usize {
    16
}

fn default_channels() -> usize {
    1
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::default(),
            count: default_count(),
            height: default_side(),
            width: default_side(),
            channels: default_channels(),
        }
    }
}

impl SceneConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PinvSpec {
    /// Cutoff relative to the largest transfer magnitude.
    Spectral {
        #[serde(default = "default_rel_eps")]
        rel_eps: f64,
    },
    Wiener {
        #[serde(default = "default_lambda_w")]
        lambda_w: f64,
    },
}

fn default_rel_eps() -> f64 {
    DEFAULT_SPECTRAL_REL_EPS
}

fn default_lambda_w() -> f64 {
    DEFAULT_LAMBDA_W
}

impl Default for PinvSpec {
    fn default() -> Self {
        PinvSpec::Spectral {
            rel_eps: DEFAULT_SPECTRAL_REL_EPS,
        }
    }
}

impl PinvSpec {
    pub fn build(&self, op: &ConvolutionOperator) -> Result<PseudoInverse> {
        let mode = match *self {
            PinvSpec::Spectral { rel_eps } => {
                if !(rel_eps >= 0.0) {
                    return Err(Error::Config(format!("rel_eps must be nonnegative, got {rel_eps}")));
                }
                PinvMode::Spectral {
                    eps: rel_eps * op.max_transfer_magnitude(),
                }
            }
            PinvSpec::Wiener { lambda_w } => PinvMode::Wiener { lambda_w },
        };
        PseudoInverse::new(op, mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Isotropic Gaussian `N(mean, variance)`.
    Gaussian {
        #[serde(default = "default_prior_mean")]
        mean: f64,
        #[serde(default = "default_prior_variance")]
        variance: f64,
    },
    /// Micro-UNet denoiser trained on synthetic scenes of the configured kind.
    Learned {
        #[serde(default = "default_prior_scenes")]
        scenes: usize,
        #[serde(default = "default_prior_epochs")]
        epochs: usize,
        #[serde(default = "default_prior_lr")]
        lr: f64,
    },
}

fn default_prior_mean() -> f64 {
    0.5
}

fn default_prior_variance() -> f64 {
    0.1
}

fn default_prior_scenes() -> usize {
    200
}

fn default_prior_epochs() -> usize {
    30
}

fn default_prior_lr() -> f64 {
    1e-3
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Learned {
            scenes: default_prior_scenes(),
            epochs: default_prior_epochs(),
            lr: default_prior_lr(),
        }
    }
}

/// A reconstruction method and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    Wiener {
        #[serde(default = "default_lambda_w")]
        lambda_w: f64,
    },
    Admm(AdmmConfig),
    Dps(DpsConfig),
    /// DDNM with hard range replacement.
    Ddnm,
    /// DDNM+ relaxed correction.
    #[serde(rename = "ddnm+")]
    DdnmPlus {
        #[serde(default = "default_teacher_sigma_y")]
        sigma_y: f64,
        #[serde(default)]
        sigma_y_scale: SigmaYScale,
    },
    /// Distilled single-pass student.
    Nsdd,
}

fn default_teacher_sigma_y() -> f64 {
    0.6
}

impl SolverSpec {
    pub fn parse_name(name: &str) -> Result<Self> {
        Ok(match name {
            "wiener" => SolverSpec::Wiener {
                lambda_w: DEFAULT_LAMBDA_W,
            },
            "admm" => SolverSpec::Admm(AdmmConfig::default()),
            "dps" => SolverSpec::Dps(DpsConfig::default()),
            "ddnm" => SolverSpec::Ddnm,
            "ddnm+" => SolverSpec::DdnmPlus {
                sigma_y: default_teacher_sigma_y(),
                sigma_y_scale: SigmaYScale::Raw,
            },
            "nsdd" => SolverSpec::Nsdd,
            other => return Err(Error::Config(format!("unknown solver {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverSpec::Wiener { .. } => "wiener",
            SolverSpec::Admm(_) => "admm",
            SolverSpec::Dps(_) => "dps",
            SolverSpec::Ddnm => "ddnm",
            SolverSpec::DdnmPlus { .. } => "ddnm+",
            SolverSpec::Nsdd => "nsdd",
        }
    }

    /// Parameter names accepted by [`SolverSpec::with_param`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            SolverSpec::Wiener { .. } => &["lambda_w"],
            SolverSpec::Admm(_) => &["tau", "rho", "iters"],
            SolverSpec::Dps(_) => &["zeta"],
            SolverSpec::DdnmPlus { .. } => &["sigma_y"],
            SolverSpec::Ddnm | SolverSpec::Nsdd => &[],
        }
    }

    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut s = *self;
        match (&mut s, param) {
            (SolverSpec::Wiener { lambda_w }, "lambda_w") => *lambda_w = value,
            (SolverSpec::Admm(c), "tau") => c.tau = value,
            (SolverSpec::Admm(c), "rho") => c.rho = value,
            (SolverSpec::Admm(c), "iters") => c.iters = value as usize,
            (SolverSpec::Dps(c), "zeta") => c.zeta = value,
            (SolverSpec::DdnmPlus { sigma_y, .. }, "sigma_y") => *sigma_y = value,
            _ => {
                return Err(Error::Config(format!(
                    "solver {} has no sweepable parameter {param:?} (expected one of {:?})",
                    self.name(),
                    self.param_names()
                )))
            }
        }
        Ok(s)
    }

    /// Compact `key=value` description for CSV rows.
    pub fn describe(&self) -> String {
        match self {
            SolverSpec::Wiener { lambda_w } => format!("lambda_w={lambda_w}"),
            SolverSpec::Admm(c) => format!("tau={};rho={};iters={}", c.tau, c.rho, c.iters),
            SolverSpec::Dps(c) => format!("zeta={};stop_gradient={}", c.zeta, c.stop_gradient),
            SolverSpec::Ddnm => String::new(),
            SolverSpec::DdnmPlus { sigma_y, sigma_y_scale } => {
                format!("sigma_y={sigma_y};scale={sigma_y_scale:?}").to_lowercase()
            }
            SolverSpec::Nsdd => String::new(),
        }
    }

    pub fn ddnm_config(&self) -> Option<DdnmConfig> {
        match *self {
            SolverSpec::Ddnm => Some(DdnmConfig::exact()),
            SolverSpec::DdnmPlus { sigma_y, sigma_y_scale } => Some(DdnmConfig {
                sigma_y,
                mode: DdnmMode::Relaxed,
                sigma_y_scale,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Number of training measurements in the teacher cache.
    pub count: usize,
    pub teacher: TeacherConfig,
    pub train: StudentTrainConfig,
    pub t_fix: TimestepTag,
    pub project_null: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            count: 100,
            teacher: TeacherConfig::default(),
            train: StudentTrainConfig {
                epochs: 30,
                ..StudentTrainConfig::default()
            },
            t_fix: TimestepTag::High,
            project_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub solver: String,
    pub param: String,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
}

/// Five equally spaced points in `[0, 1]`.
pub fn default_grid() -> Vec<f64> {
    (0..5).map(|i| i as f64 / 4.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Mse,
    Psnr,
    Ssim,
    Residual,
}

fn default_metrics() -> Vec<MetricName> {
    vec![MetricName::Mse, MetricName::Psnr, MetricName::Ssim, MetricName::Residual]
}

fn default_solvers() -> Vec<SolverSpec> {
    ["wiener", "admm", "ddnm+", "nsdd", "dps"]
        .iter()
        .map(|n| SolverSpec::parse_name(n).expect("known solver"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_n: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_n: 0.0 }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scenes: SceneConfig,
    #[serde(default)]
    pub psf: PsfSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub pinv: PinvSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_solvers")]
    pub solvers: Vec<SolverSpec>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            scenes: SceneConfig::default(),
            psf: PsfSpec::default(),
            noise: NoiseConfig::default(),
            pinv: PinvSpec::default(),
            schedule: ScheduleConfig::default(),
            prior: PriorSpec::default(),
            solvers: default_solvers(),
            metrics: default_metrics(),
            distill: DistillConfig::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.scenes.dims();
        d.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.scenes.count == 0 {
            return Err(Error::Config("scenes.count must be at least 1".into()));
        }
        if !(self.noise.sigma_n >= 0.0) {
            return Err(Error::Config(format!("noise.sigma_n must be nonnegative, got {}", self.noise.sigma_n)));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("at least one solver is required".into()));
        }
        for s in &self.solvers {
            match s {
                SolverSpec::Admm(c) => c.validate().map_err(|e| Error::Config(e.to_string()))?,
                SolverSpec::Dps(c) if !(c.zeta >= 0.0) => {
                    return Err(Error::Config(format!("dps zeta must be nonnegative, got {}", c.zeta)))
                }
                SolverSpec::DdnmPlus { sigma_y, .. } if !(*sigma_y >= 0.0) => {
                    return Err(Error::Config(format!("ddnm+ sigma_y must be nonnegative, got {sigma_y}")))
                }
                SolverSpec::Wiener { lambda_w } if !(*lambda_w > 0.0) => {
                    return Err(Error::Config(format!("wiener lambda_w must be positive, got {lambda_w}")))
                }
                _ => {}
            }
        }
        self.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        self.distill.teacher.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
        }
        Ok(())
    }

    /// Builds the prior. A learned prior is trained here, deterministically.
    pub fn build_prior(&self, exec: Exec) -> Result<Box<dyn DenoiserPrior>> {
        let d = self.scenes.dims();
        match self.prior {
            PriorSpec::Gaussian { mean, variance } => Ok(Box::new(GaussianPrior::isotropic(d, mean, variance)?)),
            PriorSpec::Learned { scenes, epochs, lr } => {
                let data = synth_scenes(self.scenes.kind, scenes, &SeededRng::for_stage(self.seed, "prior-scenes"), d)?;
                let mut init = SeededRng::for_stage(self.seed, "prior-init");
                let net = Network::unet2(d.channels + 1, d.channels, &mut init, false, None);
                let cfg = DenoiserTrainConfig {
                    epochs,
                    adam: AdamConfig { lr, ..AdamConfig::default() },
                    ..DenoiserTrainConfig::default()
                };
                let sched = self.schedule.build()?;
                let mut rng = SeededRng::for_stage(self.seed, "prior-train");
                let (den, _) = train_denoiser(net, &data, &sched, &mut rng, &cfg, exec)?;
                Ok(Box::new(den))
            }
        }
    }
}
