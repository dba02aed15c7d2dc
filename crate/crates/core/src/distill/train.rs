use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::{conditioning_hash, TeacherCache, TeacherTarget};
use super::student::{student_input, StudentModel};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::operator::{ConvolutionOperator, PseudoInverse};
use crate::parallel::{self, Exec};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seed of the minibatch shuffling stream.
    pub seed: u64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Per-epoch mean per-pixel MSE against the teacher. Row 0 is the model
/// before training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurves {
    pub rows: Vec<(usize, f64, Option<f64>)>,
}

impl TrainingCurves {
    pub fn initial_train(&self) -> f64 {
        self.rows[0].1
    }

    pub fn final_train(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.1)
    }

    pub fn final_test(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.2)
    }

    /// CSV with columns `epoch,train_mse,test_mse`; `test_mse` is empty
    /// when there is no held-out split.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,test_mse\n");
        for (e, tr, te) in &self.rows {
            let te = te.map(|v| format!("{v:.17e}")).unwrap_or_default();
            s.push_str(&format!("{e},{tr:.17e},{te}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

struct Prepared {
    z: ImageTensor,
    anchor: ImageTensor,
    target: ImageTensor,
}

fn prepare(
    items: &[&TeacherTarget],
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    exec: Exec,
) -> Result<Vec<Prepared>> {
    parallel::try_map_indexed(exec, items.len(), |i| {
        let (z, anchor) = student_input(op, pinv, &items[i].y)?;
        Ok(Prepared {
            z,
            anchor,
            target: items[i].target.clone(),
        })
    })
}

fn forward(
    model: &StudentModel,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    p: &Prepared,
) -> Result<ImageTensor> {
    let r = model.reducer.forward(&p.z)?;
    let mut null = model.backbone.forward(&r)?;
    if model.project_null {
        null = pinv.null_project(op, &null, true)?;
    }
    p.anchor.add(&null)
}

fn mean_mse(
    model: &StudentModel,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    set: &[Prepared],
    exec: Exec,
) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let errs = parallel::try_map_indexed(exec, set.len(), |i| {
        forward(model, op, pinv, &set[i])?.mse(&set[i].target)
    })?;
    Ok(Some(errs.iter().sum::<f64>() / set.len() as f64))
}

/// Per-sample loss and gradient with respect to `[reducer; backbone]`.
fn sample_gradient(
    model: &StudentModel,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    p: &Prepared,
) -> Result<(f64, Vec<f64>)> {
    let (r, rcache) = model.reducer.forward_cached(&p.z)?;
    let (raw, bcache) = model.backbone.forward_cached(&r)?;
    let null = if model.project_null {
        pinv.null_project(op, &raw, true)?
    } else {
        raw
    };
    let diff = p.anchor.add(&null)?.sub(&p.target)?;
    let n = diff.len() as f64;
    let mut d = diff.scale(2.0 / n);
    if model.project_null {
        // The projector has real spectral gains, so it is self-adjoint.
        d = pinv.null_project(op, &d, true)?;
    }
    let gb = model.backbone.backward(&bcache, &d)?;
    let gr = model.reducer.backward(&rcache, &gb.input)?;
    let mut g = gr.params;
    g.extend(gb.params);
    Ok((diff.norm_sq() / n, g))
}

/// Minibatch Adam on the per-pixel MSE between `x̂_s` and the teacher
/// targets of the training split.
///
/// Fails with a configuration error if `op`/`pinv` differ from the ones the
/// cache was built with.
pub fn train_student(
    mut model: StudentModel,
    cache: &TeacherCache,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    cfg: &StudentTrainConfig,
    exec: Exec,
) -> Result<(StudentModel, TrainingCurves)> {
    let expected = conditioning_hash(op, pinv);
    if cache.manifest.conditioning_hash != expected {
        return Err(Error::Config(format!(
            "cache was built for conditioning {}, student uses {expected}",
            cache.manifest.conditioning_hash
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let (train, test) = cache.split();
    if train.is_empty() {
        return Err(Error::Config("teacher cache has no training items".into()));
    }
    let train = prepare(&train, op, pinv, exec)?;
    let test = prepare(&test, op, pinv, exec)?;

    let mut params = model.params();
    let mut adam = AdamState::new(cfg.adam, params.len())?;
    let mut rng = SeededRng::for_stage(cfg.seed, "student-batches");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = TrainingCurves::default();
    let initial = mean_mse(&model, op, pinv, &train, exec)?.unwrap_or(f64::NAN);
    curves.rows.push((0, initial, mean_mse(&model, op, pinv, &test, exec)?));

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let results = parallel::try_map_indexed(exec, batch.len(), |k| {
                sample_gradient(&model, op, pinv, &train[batch[k]])
            })?;
            let mut grad = vec![0.0; params.len()];
            for (_, g) in &results {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            adam.step(&mut params, &grad)?;
            model.set_params(&params)?;
        }
        let tr = mean_mse(&model, op, pinv, &train, exec)?.unwrap_or(f64::NAN);
        if !tr.is_finite() {
            return Err(Error::Numeric(format!("student loss diverged in epoch {epoch}")));
        }
        curves.rows.push((epoch, tr, mean_mse(&model, op, pinv, &test, exec)?));
    }
    Ok((model, curves))
}
