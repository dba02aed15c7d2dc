//! `lensless`: command-line driver for desk-scale lensless reconstruction
//! experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lensless_core::bench::{
    distill_pipeline, find_solver, records_csv, run_quality_vs_time, run_reconstruct, run_sweep, timing_csv,
    write_dataset, write_file, write_run_manifest, Experiment, ExperimentConfig, FileSink, SolverSpec, SweepConfig,
    TIMING_DIR,
};
use lensless_core::bench::compute_metrics;
use lensless_core::bench::fmt_metric;
use lensless_core::distill::{student_infer_batch, write_inference_csv, StudentModel, TimestepTag};
use lensless_core::io::{ppm_export, read_tensor, write_tensor};
use lensless_core::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "lensless", version, about = "Lensless reconstruction experiments")]
struct Cli {
    /// Run batch work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate scenes and simulated captures.
    Simulate(Common),
    /// Reconstruct every simulated capture, or one measurement file.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solver: String,
        #[arg(long)]
        sigma_y: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        /// Diffusion steps T.
        #[arg(long)]
        steps: Option<usize>,
        /// Trained student directory, for `--solver nsdd`.
        #[arg(long)]
        student: Option<PathBuf>,
        /// Reconstruct this tensor file instead of the simulated set.
        #[arg(long)]
        measurement: Option<PathBuf>,
    },
    /// Sweep one solver parameter over a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values; defaults to 0, 0.25, 0.5, 0.75, 1.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Quality versus time for every configured solver.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Assert the runtime and quality orderings.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Teacher cache, student training and inference.
    Distill {
        #[command(subcommand)]
        cmd: DistillCmd,
    },
    /// Metrics of an estimate against a reference.
    Metrics {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Measurement for the data residual; needs `--config` for the operator.
        #[arg(long, requires = "config")]
        measurement: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TFix {
    High,
    Low,
}

#[derive(Subcommand)]
enum DistillCmd {
    /// Run the teacher on the distillation set and write `cache/<hash>/`.
    BuildCache {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Train a student on an existing cache.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, value_enum)]
        t_fix: Option<TFix>,
        #[arg(long)]
        project_null: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Single-pass inference on the simulated set.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        student: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    Ok((cfg, out))
}

fn needs_student(specs: &[SolverSpec]) -> bool {
    specs.iter().any(|s| matches!(s, SolverSpec::Nsdd))
}

/// Loads `--student`, or distills one under `<out>/distill`.
fn student_for(exp: &Experiment, given: Option<&Path>, out: &Path, exec: Exec) -> Result<StudentModel> {
    match given {
        Some(dir) => StudentModel::load(dir),
        None => {
            let root = out.join("distill");
            Ok(distill_pipeline(exp, &root.join("cache"), &root.join("student"), exec)?.0)
        }
    }
}

fn write_records(exp: &Experiment, out: &Path, name: &str, recs: &[lensless_core::bench::BenchmarkRecord]) -> Result<()> {
    write_file(&out.join(format!("{name}.csv")), &records_csv(recs, &exp.config.metrics))?;
    write_file(&out.join(TIMING_DIR).join(format!("{name}.csv")), &timing_csv(recs))
}

fn run(cli: Cli) -> Result<bool> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.verb {
        Verb::Simulate(common) => {
            let (cfg, out) = load(&common)?;
            let exp = Experiment::new(cfg)?;
            write_dataset(&exp, &out)?;
            write_run_manifest(&out, "simulate", &exp)?;
        }
        Verb::Reconstruct {
            common,
            solver,
            sigma_y,
            zeta,
            steps,
            student,
            measurement,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(t) = steps {
                cfg.schedule.steps = t;
            }
            let mut spec = find_solver(&cfg, &solver)?;
            if let Some(s) = sigma_y {
                spec = spec.with_param("sigma_y", s)?;
            }
            if let Some(z) = zeta {
                spec = spec.with_param("zeta", z)?;
            }
            let exp = Experiment::new(cfg)?;
            let model = if needs_student(&[spec]) {
                Some(student_for(&exp, student.as_deref(), &out, exec)?)
            } else {
                None
            };
            let recon = out.join("recon");
            match measurement {
                Some(path) => {
                    let y = read_tensor(&path)?;
                    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let r = exp.solve(&spec, &id, &y, model.as_ref(), exec)?;
                    std::fs::create_dir_all(&recon).map_err(|e| Error::Io { path: recon.clone(), source: e })?;
                    write_tensor(&recon.join(format!("{id}.tensor")), &r.x)?;
                    ppm_export(&r.x, &recon.join(format!("{id}.{}", if r.x.channels() == 3 { "ppm" } else { "pgm" })))?;
                    if let Some(t) = &r.trace {
                        t.write_csv(&recon.join(format!("{id}.trace.csv")))?;
                    }
                    write_file(
                        &out.join(TIMING_DIR).join("reconstruct.csv"),
                        &format!("image_id,solver,params,seconds\n{id},{},{},{:.9}\n", spec.name(), spec.describe(), r.seconds),
                    )?;
                }
                None => {
                    let recs = run_reconstruct(&exp, &spec, model.as_ref(), &FileSink { dir: recon }, exec)?;
                    write_records(&exp, &out, "reconstruct", &recs)?;
                }
            }
            write_run_manifest(&out, "reconstruct", &exp)?;
        }
        Verb::Sweep {
            common,
            solver,
            param,
            grid,
            student,
        } => {
            let (cfg, out) = load(&common)?;
            let base = cfg.sweep.clone();
            let axis = SweepConfig {
                solver: solver
                    .or_else(|| base.as_ref().map(|b| b.solver.clone()))
                    .ok_or_else(|| Error::Config("sweep needs --solver or a [sweep] section".into()))?,
                param: param
                    .or_else(|| base.as_ref().map(|b| b.param.clone()))
                    .ok_or_else(|| Error::Config("sweep needs --param or a [sweep] section".into()))?,
                grid: grid
                    .or_else(|| base.as_ref().map(|b| b.grid.clone()))
                    .unwrap_or_else(lensless_core::bench::default_grid),
            };
            let exp = Experiment::new(cfg)?;
            let spec = find_solver(&exp.config, &axis.solver)?;
            let model = if needs_student(&[spec]) {
                Some(student_for(&exp, student.as_deref(), &out, exec)?)
            } else {
                None
            };
            let res = run_sweep(&exp, &axis, model.as_ref(), &FileSink { dir: out.join("recon") }, exec)?;
            write_file(&out.join("sweep.csv"), &res.to_csv(&exp.config.metrics))?;
            write_file(&out.join(TIMING_DIR).join("sweep.csv"), &res.timing_csv())?;
            write_run_manifest(&out, "sweep", &exp)?;
        }
        Verb::Bench { common, check, student } => {
            let (cfg, out) = load(&common)?;
            let exp = Experiment::new(cfg)?;
            let model = if needs_student(&exp.config.solvers) {
                Some(student_for(&exp, student.as_deref(), &out, exec)?)
            } else {
                None
            };
            let qt = run_quality_vs_time(&exp, model.as_ref(), &FileSink { dir: out.join("recon") }, exec)?;
            write_records(&exp, &out, "records", &qt.records)?;
            write_file(&out.join("quality_vs_time.csv"), &qt.to_csv(&exp.config.metrics))?;
            write_file(&out.join(TIMING_DIR).join("quality_vs_time.csv"), &qt.timing_csv())?;
            let mut ok = true;
            if check {
                let quality = qt.quality_checks();
                let runtime = qt.runtime_checks();
                let text = |cs: &[lensless_core::bench::Check]| cs.iter().map(|c| c.line() + "\n").collect::<String>();
                for c in quality.iter().chain(&runtime) {
                    println!("{}", c.line());
                    ok &= c.passed;
                }
                write_file(&out.join("checks.txt"), &text(&quality))?;
                write_file(&out.join(TIMING_DIR).join("checks.txt"), &text(&runtime))?;
            }
            write_run_manifest(&out, "bench", &exp)?;
            return Ok(ok);
        }
        Verb::Distill { cmd } => match cmd {
            DistillCmd::BuildCache { config, cache } => {
                let exp = Experiment::new(ExperimentConfig::load(&config)?)?;
                let c = exp.build_cache(&cache, exec)?;
                println!("{}", c.dir.display());
            }
            DistillCmd::Train {
                common,
                cache,
                t_fix,
                project_null,
                epochs,
            } => {
                let (mut cfg, out) = load(&common)?;
                if let Some(t) = t_fix {
                    cfg.distill.t_fix = match t {
                        TFix::High => TimestepTag::High,
                        TFix::Low => TimestepTag::Low,
                    };
                }
                cfg.distill.project_null |= project_null;
                if let Some(e) = epochs {
                    cfg.distill.train.epochs = e;
                }
                let exp = Experiment::new(cfg)?;
                let c = exp.open_cache(&cache, exec)?;
                let (model, curves) = exp.train_student(&c, exec)?;
                model.save(&out)?;
                curves.write_csv(&out.join("curves.csv"))?;
                write_run_manifest(&out, "distill-train", &exp)?;
            }
            DistillCmd::Infer { common, student } => {
                let (cfg, out) = load(&common)?;
                let exp = Experiment::new(cfg)?;
                let model = StudentModel::load(&student)?;
                let ms: Vec<(String, _)> = exp.scenes.iter().map(|s| (s.id.clone(), s.y.clone())).collect();
                let recs = student_infer_batch(&model, &exp.op, &exp.pinv, &ms, exec)?;
                let dir = out.join("recon");
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                let mut csv = String::from("image_id,mse,psnr,ssim,residual,perceptual\n");
                for (r, s) in recs.iter().zip(&exp.scenes) {
                    write_tensor(&dir.join(format!("{}.tensor", r.id)), &r.output)?;
                    let m = compute_metrics(&r.output, &s.reference, &exp.op, &s.y)?;
                    csv.push_str(&format!(
                        "{},{},{},{},{},\n",
                        r.id,
                        fmt_metric(m.mse),
                        fmt_metric(m.psnr),
                        fmt_metric(m.ssim),
                        fmt_metric(m.residual)
                    ));
                }
                write_file(&out.join("inference.csv"), &csv)?;
                std::fs::create_dir_all(out.join(TIMING_DIR)).map_err(|e| Error::Io { path: out.clone(), source: e })?;
                write_inference_csv(&recs, &out.join(TIMING_DIR).join("inference.csv"))?;
                write_run_manifest(&out, "distill-infer", &exp)?;
            }
        },
        Verb::Metrics {
            estimate,
            reference,
            measurement,
            config,
            out,
        } => {
            let x = read_tensor(&estimate)?;
            let r = read_tensor(&reference)?;
            let mse = x.mse(&r)?;
            let ssim = lensless_core::bench::ssim(&x, &r)?;
            let residual = match (measurement, config) {
                (Some(m), Some(c)) => {
                    let mut cfg = ExperimentConfig::load(&c)?;
                    cfg.scenes.count = 1;
                    let exp = Experiment::new(cfg)?;
                    let y = read_tensor(&m)?;
                    fmt_metric(compute_metrics(&x, &r, &exp.op, &y)?.residual)
                }
                _ => String::new(),
            };
            let csv = format!(
                "mse,psnr,ssim,residual,perceptual\n{},{},{},{},\n",
                fmt_metric(mse),
                fmt_metric(lensless_core::bench::psnr(mse)),
                fmt_metric(ssim),
                residual
            );
            match out {
                Some(p) => write_file(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("lensless: ordering checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("lensless: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
