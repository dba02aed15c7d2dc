//! Experiment driver: dataset simulation, solver jobs, sweeps, the
//! quality-versus-time table and run manifests.
//!
//! Everything a run writes is deterministic given the config, except files
//! under `timing/`, which hold wall-clock measurements.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, MetricName, SolverSpec, SweepConfig};
use super::metrics::{compute_metrics, fmt_metric, Metrics};
use super::scenes::{simulate_capture, synth_scenes};
use crate::classical::{admm_tv_reconstruct, wiener_reconstruct};
use crate::diffusion::{DenoiserPrior, NoiseSchedule};
use crate::distill::{
    build_teacher_cache, student_forward, teacher_hash, train_student, MeasurementItem, StudentModel, TeacherCache,
    TrainingCurves,
};
use crate::error::{Error, Result};
use crate::guidance::{ddnm_reconstruct, dps_reconstruct, GuidanceTrace};
use crate::io::{ppm_export, write_tensor};
use crate::operator::{ConvolutionOperator, Psf, PseudoInverse};
use crate::parallel::{self, Exec};
use crate::psf::synth_mask_psf;
use crate::rng::{stage_seed, SeededRng};
use crate::tensor::{Dims, ImageTensor};

/// Subdirectory for wall-clock outputs.
pub const TIMING_DIR: &str = "timing";
pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub reference: ImageTensor,
    pub y: ImageTensor,
}

/// A configured experiment: operator, pseudo-inverse, schedule and the
/// simulated evaluation set. The prior is built on first use.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub psf: Psf,
    pub op: ConvolutionOperator,
    pub pinv: PseudoInverse,
    pub sched: NoiseSchedule,
    pub scenes: Vec<Scene>,
    prior: OnceLock<Box<dyn DenoiserPrior>>,
}

fn captures(
    cfg: &ExperimentConfig,
    op: &ConvolutionOperator,
    scenes: Vec<ImageTensor>,
    prefix: &str,
    stage: &str,
) -> Result<Vec<Scene>> {
    let noise = SeededRng::for_stage(cfg.seed, stage);
    scenes
        .into_iter()
        .enumerate()
        .map(|(i, reference)| {
            let y = simulate_capture(op, &reference, cfg.noise.sigma_n, &mut noise.child(i as u64))?;
            Ok(Scene {
                id: format!("{prefix}-{i:04}"),
                reference,
                y,
            })
        })
        .collect()
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let d = config.scenes.dims();
        let psf = synth_mask_psf(config.psf, &mut SeededRng::for_stage(config.seed, "psf"), d.height, d.width)?;
        let op = ConvolutionOperator::new(&psf, d)?;
        let pinv = config.pinv.build(&op)?;
        let sched = config.schedule.build()?;
        let refs = synth_scenes(
            config.scenes.kind,
            config.scenes.count,
            &SeededRng::for_stage(config.seed, "scenes"),
            d,
        )?;
        let scenes = captures(&config, &op, refs, "scene", "capture")?;
        Ok(Self {
            config,
            psf,
            op,
            pinv,
            sched,
            scenes,
            prior: OnceLock::new(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.op.dims()
    }

    pub fn prior(&self, exec: Exec) -> Result<&dyn DenoiserPrior> {
        if self.prior.get().is_none() {
            let p = self.config.build_prior(exec)?;
            let _ = self.prior.set(p);
        }
        Ok(self.prior.get().expect("prior initialized").as_ref())
    }

    /// Uses `prior` instead of building one from the config.
    pub fn with_prior(self, prior: Box<dyn DenoiserPrior>) -> Self {
        let _ = self.prior.set(prior);
        self
    }

    /// Training measurements for distillation, disjoint from the evaluation
    /// scenes (separate seed stream and id prefix).
    pub fn distill_items(&self) -> Result<Vec<MeasurementItem>> {
        let refs = synth_scenes(
            self.config.scenes.kind,
            self.config.distill.count,
            &SeededRng::for_stage(self.config.seed, "distill-scenes"),
            self.dims(),
        )?;
        Ok(captures(&self.config, &self.op, refs, "train", "distill-capture")?
            .into_iter()
            .map(|s| MeasurementItem {
                id: s.id,
                y: s.y,
                reference: Some(s.reference),
            })
            .collect())
    }

    pub fn build_cache(&self, root: &Path, exec: Exec) -> Result<TeacherCache> {
        let items = self.distill_items()?;
        build_teacher_cache(
            &items,
            &self.op,
            &self.pinv,
            self.prior(exec)?,
            &self.config.distill.teacher,
            root,
            exec,
        )
    }

    /// Opens the cache under `root`, refusing one built from a different
    /// teacher, prior or operator.
    pub fn open_cache(&self, root: &Path, exec: Exec) -> Result<TeacherCache> {
        let cache = TeacherCache::open(root)?;
        let expected = teacher_hash(&self.config.distill.teacher, &self.op, &self.pinv, self.prior(exec)?);
        if cache.manifest.hash != expected {
            return Err(Error::StaleCache {
                path: cache.dir.clone(),
                found: cache.manifest.hash.clone(),
                expected,
            });
        }
        Ok(cache)
    }

    pub fn train_student(&self, cache: &TeacherCache, exec: Exec) -> Result<(StudentModel, TrainingCurves)> {
        let d = &self.config.distill;
        let model = StudentModel::new(
            self.dims().channels,
            d.t_fix,
            d.project_null,
            &mut SeededRng::for_stage(self.config.seed, "student-init"),
        )?;
        train_student(model, cache, &self.op, &self.pinv, &d.train, exec)
    }

    /// Per-image RNG for stochastic solvers. Every solver and grid point sees
    /// the same stream for a given image.
    pub fn solve_rng(&self, id: &str) -> SeededRng {
        SeededRng::new(stage_seed(stage_seed(self.config.seed, "solve"), id))
    }

    /// Runs one solver on one measurement. Only the solver call is timed.
    pub fn solve(
        &self,
        spec: &SolverSpec,
        id: &str,
        y: &ImageTensor,
        student: Option<&StudentModel>,
        exec: Exec,
    ) -> Result<SolveOutput> {
        let needs_prior = matches!(spec, SolverSpec::Dps(_) | SolverSpec::Ddnm | SolverSpec::DdnmPlus { .. });
        let prior = if needs_prior { Some(self.prior(exec)?) } else { None };
        let mut rng = self.solve_rng(id);
        let start = Instant::now();
        let (x, trace) = match spec {
            SolverSpec::Wiener { lambda_w } => (wiener_reconstruct(&self.op, y, *lambda_w)?, None),
            SolverSpec::Admm(c) => (admm_tv_reconstruct(&self.op, y, c)?.x, None),
            SolverSpec::Dps(c) => {
                let (x, t) = dps_reconstruct(&self.op, y, prior.unwrap(), &self.sched, c, &mut rng)?;
                (x, Some(t))
            }
            SolverSpec::Ddnm | SolverSpec::DdnmPlus { .. } => {
                let cfg = spec.ddnm_config().expect("ddnm variant");
                let (x, t) = ddnm_reconstruct(&self.op, &self.pinv, y, prior.unwrap(), &self.sched, &cfg, &mut rng)?;
                (x, Some(t))
            }
            SolverSpec::Nsdd => {
                let model = student.ok_or_else(|| Error::Config("solver nsdd needs a trained student".into()))?;
                (student_forward(model, &self.op, &self.pinv, y)?.0, None)
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        x.ensure_finite(spec.name())?;
        Ok(SolveOutput { x, trace, seconds })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: ImageTensor,
    pub trace: Option<GuidanceTrace>,
    /// Wall-clock seconds of the solver call alone.
    pub seconds: f64,
}

/// Receives each reconstruction as soon as its job finishes, outside the
/// timed region.
pub trait OutputSink: Sync {
    fn reconstruction(&self, key: &JobKey, out: &SolveOutput) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl OutputSink for NullSink {
    fn reconstruction(&self, _: &JobKey, _: &SolveOutput) -> Result<()> {
        Ok(())
    }
}

/// Writes `<dir>/<solver>[_<tag>]/<id>.tensor`, a PGM/PPM preview and the
/// guidance trace when there is one.
pub struct FileSink {
    pub dir: PathBuf,
}

impl OutputSink for FileSink {
    fn reconstruction(&self, key: &JobKey, out: &SolveOutput) -> Result<()> {
        let sub = if key.tag.is_empty() {
            key.solver.clone()
        } else {
            format!("{}_{}", key.solver, key.tag)
        };
        let dir = self.dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_tensor(&dir.join(format!("{}.tensor", key.image_id)), &out.x)?;
        let ext = if out.x.channels() == 3 { "ppm" } else { "pgm" };
        ppm_export(&out.x, &dir.join(format!("{}.{ext}", key.image_id)))?;
        if let Some(t) = &out.trace {
            t.write_csv(&dir.join(format!("{}.trace.csv", key.image_id)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobKey {
    pub image_id: String,
    pub solver: String,
    /// Grid label such as `zeta=0.5`, empty outside sweeps.
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub image_id: String,
    pub solver: String,
    pub params: String,
    pub metrics: Metrics,
    pub seconds: f64,
}

/// Runs every `(image, solver)` job, then reduces results in job order.
fn run_jobs(
    exp: &Experiment,
    solvers: &[(SolverSpec, String)],
    student: Option<&StudentModel>,
    sink: &dyn OutputSink,
    exec: Exec,
) -> Result<Vec<BenchmarkRecord>> {
    // Build a learned prior once, up front, rather than inside a job.
    if solvers.iter().any(|(s, _)| s.ddnm_config().is_some() || matches!(s, SolverSpec::Dps(_))) {
        exp.prior(exec)?;
    }
    let n_img = exp.scenes.len();
    parallel::try_map_indexed(exec, solvers.len() * n_img, |job| {
        let (spec, tag) = &solvers[job / n_img];
        let scene = &exp.scenes[job % n_img];
        let out = exp.solve(spec, &scene.id, &scene.y, student, Exec::Sequential)?;
        let metrics = compute_metrics(&out.x, &scene.reference, &exp.op, &scene.y)?;
        let key = JobKey {
            image_id: scene.id.clone(),
            solver: spec.name().to_string(),
            tag: tag.clone(),
        };
        sink.reconstruction(&key, &out)?;
        Ok(BenchmarkRecord {
            image_id: scene.id.clone(),
            solver: spec.name().to_string(),
            params: spec.describe(),
            metrics,
            seconds: out.seconds,
        })
    })
}

/// Mean metrics and timing over one group of records.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub solver: String,
    pub params: String,
    /// Sweep value, when the row belongs to a sweep.
    pub value: Option<f64>,
    pub count: usize,
    pub mean: Metrics,
    pub mean_seconds: f64,
    pub median_seconds: f64,
}

fn summarize(records: &[BenchmarkRecord], value: Option<f64>) -> SummaryRow {
    let n = records.len() as f64;
    let avg = |f: &dyn Fn(&Metrics) -> f64| records.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let mut secs: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    secs.sort_by(f64::total_cmp);
    let median = if secs.len() % 2 == 1 {
        secs[secs.len() / 2]
    } else {
        0.5 * (secs[secs.len() / 2 - 1] + secs[secs.len() / 2])
    };
    SummaryRow {
        solver: records[0].solver.clone(),
        params: records[0].params.clone(),
        value,
        count: records.len(),
        mean: Metrics {
            mse: avg(&|m| m.mse),
            psnr: avg(&|m| m.psnr),
            ssim: avg(&|m| m.ssim),
            residual: avg(&|m| m.residual),
        },
        mean_seconds: secs.iter().sum::<f64>() / n,
        median_seconds: median,
    }
}

fn metric_value(m: &Metrics, name: MetricName) -> f64 {
    match name {
        MetricName::Mse => m.mse,
        MetricName::Psnr => m.psnr,
        MetricName::Ssim => m.ssim,
        MetricName::Residual => m.residual,
    }
}

fn metric_header(metrics: &[MetricName]) -> String {
    let mut cols: Vec<&str> = metrics
        .iter()
        .map(|m| match m {
            MetricName::Mse => "mse",
            MetricName::Psnr => "psnr",
            MetricName::Ssim => "ssim",
            MetricName::Residual => "residual",
        })
        .collect();
    // Reserved for perceptual scores from full-scale runs; always empty here.
    cols.push("perceptual");
    cols.join(",")
}

fn metric_cells(m: &Metrics, metrics: &[MetricName]) -> String {
    let mut cells: Vec<String> = metrics.iter().map(|&n| fmt_metric(metric_value(m, n))).collect();
    cells.push(String::new());
    cells.join(",")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-image quality rows, `image_id,solver,params,<metrics>,perceptual`.
pub fn records_csv(records: &[BenchmarkRecord], metrics: &[MetricName]) -> String {
    let mut s = format!("image_id,solver,params,{}\n", metric_header(metrics));
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.image_id,
            r.solver,
            csv_field(&r.params),
            metric_cells(&r.metrics, metrics)
        ));
    }
    s
}

/// Per-image timing rows, `image_id,solver,params,seconds`.
pub fn timing_csv(records: &[BenchmarkRecord]) -> String {
    let mut s = String::from("image_id,solver,params,seconds\n");
    for r in records {
        s.push_str(&format!("{},{},{},{:.9}\n", r.image_id, r.solver, csv_field(&r.params), r.seconds));
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Solves every evaluation scene with `spec` and returns per-image records.
pub fn run_reconstruct(
    exp: &Experiment,
    spec: &SolverSpec,
    student: Option<&StudentModel>,
    sink: &dyn OutputSink,
    exec: Exec,
) -> Result<Vec<BenchmarkRecord>> {
    run_jobs(exp, &[(*spec, String::new())], student, sink, exec)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepConfig,
    pub records: Vec<(f64, BenchmarkRecord)>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    /// Per-image rows followed by one `mean` row per grid point.
    pub fn to_csv(&self, metrics: &[MetricName]) -> String {
        let mut s = format!("image_id,solver,param,value,{}\n", metric_header(metrics));
        for (v, r) in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image_id,
                r.solver,
                self.axis.param,
                fmt_metric(*v),
                metric_cells(&r.metrics, metrics)
            ));
        }
        for row in &self.summary {
            s.push_str(&format!(
                "mean,{},{},{},{}\n",
                row.solver,
                self.axis.param,
                fmt_metric(row.value.unwrap_or(f64::NAN)),
                metric_cells(&row.mean, metrics)
            ));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("image_id,solver,param,value,seconds\n");
        for (v, r) in &self.records {
            s.push_str(&format!("{},{},{},{},{:.9}\n", r.image_id, r.solver, self.axis.param, fmt_metric(*v), r.seconds));
        }
        for row in &self.summary {
            s.push_str(&format!(
                "mean,{},{},{},{:.9}\n",
                row.solver,
                self.axis.param,
                fmt_metric(row.value.unwrap_or(f64::NAN)),
                row.mean_seconds
            ));
        }
        s
    }
}

/// The configured solver of that name, or its defaults.
pub fn find_solver(cfg: &ExperimentConfig, name: &str) -> Result<SolverSpec> {
    match cfg.solvers.iter().find(|s| s.name() == name) {
        Some(s) => Ok(*s),
        None => SolverSpec::parse_name(name),
    }
}

/// One record per (image, grid point) plus a mean row per grid point.
pub fn run_sweep(
    exp: &Experiment,
    axis: &SweepConfig,
    student: Option<&StudentModel>,
    sink: &dyn OutputSink,
    exec: Exec,
) -> Result<SweepResult> {
    if axis.grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let base = find_solver(&exp.config, &axis.solver)?;
    let solvers: Vec<(SolverSpec, String)> = axis
        .grid
        .iter()
        .map(|&v| Ok((base.with_param(&axis.param, v)?, format!("{}={v}", axis.param))))
        .collect::<Result<_>>()?;
    let recs = run_jobs(exp, &solvers, student, sink, exec)?;
    let n = exp.scenes.len();
    let summary = recs
        .chunks(n)
        .zip(&axis.grid)
        .map(|(c, &v)| summarize(c, Some(v)))
        .collect();
    let records = recs
        .into_iter()
        .enumerate()
        .map(|(i, r)| (axis.grid[i / n], r))
        .collect();
    Ok(SweepResult {
        axis: axis.clone(),
        records,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct QualityVsTime {
    pub records: Vec<BenchmarkRecord>,
    /// One row per solver, in config order.
    pub summary: Vec<SummaryRow>,
}

impl QualityVsTime {
    pub fn to_csv(&self, metrics: &[MetricName]) -> String {
        let mut s = format!("solver,params,count,{}\n", mean_header(metrics));
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.solver,
                csv_field(&r.params),
                r.count,
                metric_cells(&r.mean, metrics)
            ));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("solver,params,mean_seconds,median_seconds\n");
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{:.9},{:.9}\n",
                r.solver,
                csv_field(&r.params),
                r.mean_seconds,
                r.median_seconds
            ));
        }
        s
    }

    fn row(&self, solver: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.solver == solver)
    }

    /// Runtime ordering checks. Only solvers present in the run take part.
    pub fn runtime_checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        if self.summary.len() < 2 {
            return out;
        }
        let secs = |r: &SummaryRow| r.mean_seconds;
        fn others<'a>(rows: &'a [SummaryRow], name: &'a str) -> impl Iterator<Item = &'a SummaryRow> {
            rows.iter().filter(move |r| r.solver != name)
        }
        if let Some(w) = self.row("wiener") {
            let ok = others(&self.summary, "wiener").all(|r| secs(w) < secs(r));
            out.push(Check {
                name: "wiener fastest".into(),
                passed: ok,
                detail: format!("{:.3e} s", secs(w)),
            });
        }
        if let Some(s) = self.row("nsdd") {
            let ok = others(&self.summary, "nsdd").filter(|r| r.solver != "wiener").all(|r| secs(s) < secs(r));
            out.push(Check {
                name: "student second fastest".into(),
                passed: ok,
                detail: format!("{:.3e} s", secs(s)),
            });
            if let Some(t) = self.row("ddnm+") {
                let ratio = secs(t) / secs(s);
                out.push(Check {
                    name: "teacher at least 10x slower than student".into(),
                    passed: ratio >= 10.0,
                    detail: format!("ratio {ratio:.1}"),
                });
            }
        }
        if let Some(d) = self.row("dps") {
            let ok = others(&self.summary, "dps").all(|r| secs(d) > secs(r));
            out.push(Check {
                name: "dps slowest".into(),
                passed: ok,
                detail: format!("{:.3e} s", secs(d)),
            });
        }
        out
    }

    /// `ddnm+ <= nsdd <= dps` on mean MSE to the reference.
    pub fn quality_checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mse = |n: &str| self.row(n).map(|r| r.mean.mse);
        if let (Some(t), Some(s)) = (mse("ddnm+"), mse("nsdd")) {
            out.push(Check {
                name: "teacher mse <= student mse".into(),
                passed: t <= s,
                detail: format!("{t:.6e} vs {s:.6e}"),
            });
        }
        if let (Some(s), Some(d)) = (mse("nsdd"), mse("dps")) {
            out.push(Check {
                name: "student mse <= dps mse".into(),
                passed: s <= d,
                detail: format!("{s:.6e} vs {d:.6e}"),
            });
        }
        out
    }
}

fn mean_header(metrics: &[MetricName]) -> String {
    metric_header(metrics)
        .split(',')
        .map(|c| if c == "perceptual" { c.to_string() } else { format!("mean_{c}") })
        .collect::<Vec<_>>()
        .join(",")
}

/// Every configured solver on every evaluation scene, summarized per solver.
pub fn run_quality_vs_time(
    exp: &Experiment,
    student: Option<&StudentModel>,
    sink: &dyn OutputSink,
    exec: Exec,
) -> Result<QualityVsTime> {
    let solvers: Vec<(SolverSpec, String)> = exp.config.solvers.iter().map(|s| (*s, String::new())).collect();
    let records = run_jobs(exp, &solvers, student, sink, exec)?;
    let summary = records.chunks(exp.scenes.len()).map(|c| summarize(c, None)).collect();
    Ok(QualityVsTime { records, summary })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash over the config and every input tensor of the run.
pub fn inputs_hash(exp: &Experiment) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&exp.config).expect("config serializes"));
    for v in exp.psf.kernel().as_slice() {
        h.update(v.to_le_bytes());
    }
    for s in &exp.scenes {
        h.update(s.id.as_bytes());
        for t in [&s.reference, &s.y] {
            for v in t.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Relative paths of every file under `dir`, sorted, with `/` separators.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut names: Vec<String> = files
        .iter()
        .map(|p| p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
        .collect();
    names.sort();
    Ok(names)
}

/// Writes `manifest.json` with the config, derived seeds, the inputs hash
/// and a SHA-256 of every deterministic output file.
pub fn write_run_manifest(dir: &Path, verb: &str, exp: &Experiment) -> Result<()> {
    let seed = exp.config.seed;
    let stages = ["psf", "scenes", "capture", "solve", "prior-scenes", "prior-init", "prior-train", "distill-scenes", "distill-capture", "student-init"];
    let seeds: serde_json::Map<String, serde_json::Value> = stages
        .iter()
        .map(|s| (s.to_string(), json!(stage_seed(seed, s))))
        .collect();
    let mut outputs = serde_json::Map::new();
    for f in list_files(dir)? {
        if f == RUN_MANIFEST || f.starts_with(&format!("{TIMING_DIR}/")) {
            continue;
        }
        let bytes = fs::read(dir.join(&f)).map_err(|e| Error::io(dir.join(&f), e))?;
        outputs.insert(f, json!(sha256_hex(&bytes)));
    }
    let manifest = json!({
        "format": "lensless-run/1",
        "verb": verb,
        "config": exp.config,
        "seeds": {"base": seed, "stages": seeds},
        "inputs_sha256": inputs_hash(exp),
        "timing_dir": TIMING_DIR,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&dir.join(RUN_MANIFEST), &text)
}

/// Writes scenes, measurements, the PSF and image previews.
pub fn write_dataset(exp: &Experiment, dir: &Path) -> Result<()> {
    let ext = if exp.dims().channels == 3 { "ppm" } else { "pgm" };
    let psf_dir = dir.join("psf");
    fs::create_dir_all(&psf_dir).map_err(|e| Error::io(&psf_dir, e))?;
    write_tensor(&psf_dir.join("psf.tensor"), exp.psf.kernel())?;
    let k = exp.psf.kernel();
    let peak = k.max_abs();
    if peak > 0.0 {
        ppm_export(&k.scale(1.0 / peak), &psf_dir.join("psf.pgm"))?;
    }
    for (sub, pick) in [("scenes", true), ("measurements", false)] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for s in &exp.scenes {
            let t = if pick { &s.reference } else { &s.y };
            write_tensor(&d.join(format!("{}.tensor", s.id)), t)?;
            ppm_export(t, &d.join(format!("{}.{ext}", s.id)))?;
        }
    }
    Ok(())
}

/// Builds (or reuses) the teacher cache under `root`, trains the student and
/// writes its checkpoint and loss curves under `student_dir`.
pub fn distill_pipeline(
    exp: &Experiment,
    cache_root: &Path,
    student_dir: &Path,
    exec: Exec,
) -> Result<(StudentModel, TrainingCurves)> {
    let expected = teacher_hash(&exp.config.distill.teacher, &exp.op, &exp.pinv, exp.prior(exec)?);
    let cache = match TeacherCache::open(cache_root) {
        Ok(c) if c.manifest.hash == expected => c,
        _ => exp.build_cache(cache_root, exec)?,
    };
    let (model, curves) = exp.train_student(&cache, exec)?;
    model.save(student_dir)?;
    curves.write_csv(&student_dir.join("curves.csv"))?;
    Ok((model, curves))
}
