//! Experiment driver: synthetic scenes, capture simulation, metrics,
//! sweeps and the quality-versus-time table.

mod config;
mod metrics;
mod run;
mod scenes;

pub use config::{
    default_grid, DistillConfig, ExperimentConfig, MetricName, NoiseConfig, PinvSpec, PriorSpec, SceneConfig,
    SolverSpec, SweepConfig,
};
pub use metrics::{compute_metrics, fmt_metric, psnr, ssim, ssim_window_size, Metrics};
pub use run::{
    distill_pipeline, find_solver, inputs_hash, list_files, records_csv, run_quality_vs_time, run_reconstruct,
    run_sweep, timing_csv, write_dataset, write_file, write_run_manifest, BenchmarkRecord, Check, Experiment,
    FileSink, JobKey, NullSink, OutputSink, QualityVsTime, Scene, SolveOutput, SummaryRow, SweepResult,
    RUN_MANIFEST, TIMING_DIR,
};
pub use scenes::{simulate_capture, synth_scenes, SceneKind};
