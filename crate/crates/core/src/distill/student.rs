use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{load_network, save_network, Network};
use crate::operator::{ConvolutionOperator, PseudoInverse};
use crate::parallel::{self, Exec};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

/// The single timestep a student backbone is conditioned on, on the
/// 1000-step scale of a standard pretrained diffusion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestepTag {
    /// t = 999, the first denoising step.
    #[default]
    High,
    /// t = 59, close to the data manifold.
    Low,
}

impl TimestepTag {
    pub fn timestep(self) -> usize {
        match self {
            TimestepTag::High => 999,
            TimestepTag::Low => 59,
        }
    }

    /// Initial value of the backbone's scalar timestep bias.
    pub fn bias(self) -> f64 {
        self.timestep() as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct StudentMeta {
    channels: usize,
    t_fix: TimestepTag,
    project_null: bool,
}

/// Reducer `g_φ` (2C→C) followed by backbone `g_θ` (C→C).
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub reducer: Network,
    pub backbone: Network,
    pub t_fix: TimestepTag,
    /// Apply `I − A†A` to the backbone output before composing.
    pub project_null: bool,
    channels: usize,
}

impl StudentModel {
    /// Fresh student whose backbone output starts at zero, so `x̂_s = A†y`.
    pub fn new(channels: usize, t_fix: TimestepTag, project_null: bool, rng: &mut SeededRng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Parameter("student needs at least one channel".into()));
        }
        let reducer = Network::reducer(2 * channels, channels, rng);
        let backbone = Network::unet2(channels, channels, rng, true, Some(t_fix.bias()));
        Ok(Self {
            reducer,
            backbone,
            t_fix,
            project_null,
            channels,
        })
    }

    pub fn from_parts(
        reducer: Network,
        backbone: Network,
        t_fix: TimestepTag,
        project_null: bool,
    ) -> Result<Self> {
        let channels = backbone.input_channels();
        if reducer.input_channels() != 2 * channels {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "reducer takes {} channels, backbone expects 2×{channels}",
                    reducer.input_channels()
                ),
            });
        }
        Ok(Self {
            reducer,
            backbone,
            t_fix,
            project_null,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.reducer.params();
        p.extend(self.backbone.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.reducer.num_params();
        if p.len() != n + self.backbone.num_params() {
            return Err(Error::Parameter(format!(
                "student has {} parameters, got {}",
                n + self.backbone.num_params(),
                p.len()
            )));
        }
        self.reducer.set_params(&p[..n])?;
        self.backbone.set_params(&p[n..])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_network(&self.reducer, dir, "reducer")?;
        save_network(&self.backbone, dir, "backbone")?;
        let meta = StudentMeta {
            channels: self.channels,
            t_fix: self.t_fix,
            project_null: self.project_null,
        };
        let path = dir.join("student.json");
        let mut text = serde_json::to_string_pretty(&meta).expect("plain struct serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("student.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: StudentMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad student metadata {}: {e}", path.display())))?;
        let model = Self::from_parts(
            load_network(dir, "reducer")?,
            load_network(dir, "backbone")?,
            meta.t_fix,
            meta.project_null,
        )?;
        if model.channels != meta.channels {
            return Err(Error::Config(format!(
                "student metadata says {} channels, networks have {}",
                meta.channels, model.channels
            )));
        }
        Ok(model)
    }
}

/// `z = concat(y, A†y)` and the anchor `A†y`.
pub fn student_input(
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    y: &ImageTensor,
) -> Result<(ImageTensor, ImageTensor)> {
    let anchor = pinv.apply(op, y)?;
    Ok((y.concat_channels(&anchor)?, anchor))
}

/// Single forward pass, returning `(x̂_s, x̂_null)` with `x̂_s = A†y + x̂_null`.
pub fn student_forward(
    model: &StudentModel,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    y: &ImageTensor,
) -> Result<(ImageTensor, ImageTensor)> {
    if y.channels() != model.channels {
        return Err(Error::Shape {
            layer: 0,
            message: format!("student expects {} channels, got {}", model.channels, y.channels()),
        });
    }
    let (z, anchor) = student_input(op, pinv, y)?;
    let r = model.reducer.forward(&z)?;
    let mut null = model.backbone.forward(&r)?;
    if model.project_null {
        null = pinv.null_project(op, &null, true)?;
    }
    Ok((anchor.add(&null)?, null))
}

#[derive(Debug, Clone)]
pub struct InferenceRecord {
    pub id: String,
    pub output: ImageTensor,
    /// Wall-clock seconds of the forward pass alone.
    pub seconds: f64,
}

/// Reconstructs every measurement with one forward pass each. Only
/// [`student_forward`] sits inside the timed region.
pub fn student_infer_batch(
    model: &StudentModel,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    measurements: &[(String, ImageTensor)],
    exec: Exec,
) -> Result<Vec<InferenceRecord>> {
    parallel::try_map_indexed(exec, measurements.len(), |i| {
        let (id, y) = &measurements[i];
        let start = Instant::now();
        let (x, _) = student_forward(model, op, pinv, y)?;
        let seconds = start.elapsed().as_secs_f64();
        Ok(InferenceRecord {
            id: id.clone(),
            output: x,
            seconds,
        })
    })
}

/// Timing CSV with columns `id,seconds`.
pub fn write_inference_csv(records: &[InferenceRecord], path: &Path) -> Result<()> {
    let mut s = String::from("id,seconds\n");
    for r in records {
        s.push_str(&format!("{},{:.9}\n", r.id, r.seconds));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
