mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use lensless_core::bench::*;
use lensless_core::diffusion::{sample_unconditional, ScheduleConfig};
use lensless_core::psf::PsfSpec;
use lensless_core::*;

/// Weighted-sum SSIM written straight from the definition: Gaussian window
/// weights from the density formula, variances as `Σ w (x − μ)²`.
fn ssim_oracle(x: &ImageTensor, y: &ImageTensor) -> f64 {
    let (h, w) = (x.height(), x.width());
    let n = h.min(w).min(11);
    let n = if n % 2 == 0 { n - 1 } else { n };
    let r = (n / 2) as f64;
    let mut g = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (a, row) in g.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let d2 = (a as f64 - r).powi(2) + (b as f64 - r).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0.0;
    for c in 0..x.channels() {
        for i in 0..=h - n {
            for j in 0..=w - n {
                let wsum = |f: &dyn Fn(usize, usize) -> f64| {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += g[a][b] / total * f(i + a, j + b);
                        }
                    }
                    s
                };
                let mx = wsum(&|p, q| x.get(p, q, c));
                let my = wsum(&|p, q| y.get(p, q, c));
                let vx = wsum(&|p, q| (x.get(p, q, c) - mx).powi(2));
                let vy = wsum(&|p, q| (y.get(p, q, c) - my).powi(2));
                let cxy = wsum(&|p, q| (x.get(p, q, c) - mx) * (y.get(p, q, c) - my));
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
    }
    acc / count
}

#[test]
fn ssim_matches_the_windowed_formula() {
    for (dims, seed) in [(Dims::new(16, 16, 1), 1), (Dims::new(16, 16, 3), 2), (Dims::new(12, 16, 1), 3)] {
        let x = common::random_image(dims, seed);
        let noise = common::random_image(dims, seed + 10);
        let y = x.zip_map(&noise, |a, b| (0.7 * a + 0.3 * b).clamp(0.0, 1.0)).unwrap();
        for (a, b) in [(&x, &y), (&x, &noise), (&y, &y)] {
            let got = ssim(a, b).unwrap();
            let want = ssim_oracle(a, b);
            assert!((got - want).abs() < 1e-8, "{dims}: {got} vs {want}");
            assert!((-1.0..=1.0).contains(&got));
        }
    }
}

#[test]
fn psnr_follows_its_definition() {
    let d = Dims::new(16, 16, 1);
    let x = common::random_image(d, 4);
    let y = x.map(|v| v + 0.05);
    let m = compute_metrics(&y, &x, &common::operator(&Psf::delta(), d), &x).unwrap();
    assert!((m.mse - 0.0025).abs() < 1e-15);
    assert!((m.psnr - 10.0 * (1.0f64 / 0.0025).log10()).abs() < 1e-12);
    assert!((m.residual - (256.0f64 * 0.0025).sqrt()).abs() < 1e-12);
}

#[test]
fn capture_noise_has_the_requested_variance() {
    let d = Dims::new(16, 16, 1);
    let op = common::operator(&common::box2(), d);
    let scene = common::random_image(d, 5);
    let clean = op.apply(&scene).unwrap();
    let sigma = 0.07;
    let samples: Vec<f64> = (0..400)
        .map(|s| {
            let y = simulate_capture(&op, &scene, sigma, &mut SeededRng::new(s)).unwrap();
            y.sub(&clean).unwrap().norm_sq() / d.len() as f64
        })
        .collect();
    let (m, v) = common::mean_var(&samples);
    let se = (v / samples.len() as f64).sqrt();
    assert!((m - sigma * sigma).abs() < 3.0 * se, "{m} vs {} (se {se})", sigma * sigma);
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = SceneConfig {
        count: 4,
        height: 8,
        width: 8,
        ..SceneConfig::default()
    };
    cfg.psf = PsfSpec::RandomBinary { fill: 0.3 };
    cfg.prior = PriorSpec::Gaussian {
        mean: 0.5,
        variance: 0.1,
    };
    cfg.schedule = ScheduleConfig {
        steps: 20,
        ..ScheduleConfig::default()
    };
    cfg.solvers = vec![
        SolverSpec::parse_name("wiener").unwrap(),
        SolverSpec::parse_name("ddnm+").unwrap(),
    ];
    cfg
}

#[test]
fn residual_grows_with_sigma_y() {
    let exp = Experiment::new(small_config()).unwrap();
    let axis = SweepConfig {
        solver: "ddnm+".into(),
        param: "sigma_y".into(),
        grid: default_grid(),
    };
    let res = run_sweep(&exp, &axis, None, &NullSink, Exec::Parallel).unwrap();
    assert_eq!(res.records.len(), 5 * 4);
    assert_eq!(res.summary.len(), 5);
    let r: Vec<f64> = res.summary.iter().map(|s| s.mean.residual).collect();
    assert!(r.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)), "{r:?}");
    let csv = res.to_csv(&exp.config.metrics);
    assert_eq!(csv.lines().count(), 1 + 20 + 5);
    assert_eq!(csv.lines().next(), Some("image_id,solver,param,value,mse,psnr,ssim,residual,perceptual"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 5);
}

#[test]
fn zero_zeta_rows_equal_unconditional_sampling() {
    let exp = Experiment::new(small_config()).unwrap();
    let axis = SweepConfig {
        solver: "dps".into(),
        param: "zeta".into(),
        grid: vec![0.0, 0.5],
    };
    let res = run_sweep(&exp, &axis, None, &NullSink, Exec::Parallel).unwrap();
    let prior = exp.prior(Exec::Sequential).unwrap();
    for scene in &exp.scenes {
        let x = sample_unconditional(prior, &exp.sched, exp.dims(), &mut exp.solve_rng(&scene.id)).unwrap();
        let want = compute_metrics(&x, &scene.reference, &exp.op, &scene.y).unwrap();
        let (_, got) = res
            .records
            .iter()
            .find(|(v, r)| *v == 0.0 && r.image_id == scene.id)
            .unwrap();
        assert_eq!(got.metrics, want);
        let (_, guided) = res
            .records
            .iter()
            .find(|(v, r)| *v == 0.5 && r.image_id == scene.id)
            .unwrap();
        assert_ne!(guided.metrics, want);
    }
}

#[test]
fn bad_sweeps_are_config_errors() {
    let exp = Experiment::new(small_config()).unwrap();
    for (solver, param, grid) in [
        ("ddnm+", "sigma_y", vec![]),
        ("ddnm+", "zeta", vec![0.5]),
        ("wiener", "rho", vec![0.5]),
        ("nope", "x", vec![0.5]),
    ] {
        let axis = SweepConfig {
            solver: solver.into(),
            param: param.into(),
            grid,
        };
        let e = run_sweep(&exp, &axis, None, &NullSink, Exec::Sequential).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{solver}.{param}: {e}");
    }
}

#[test]
fn single_solver_gives_one_row_and_no_checks() {
    let mut cfg = small_config();
    cfg.solvers.truncate(1);
    let exp = Experiment::new(cfg).unwrap();
    let qt = run_quality_vs_time(&exp, None, &NullSink, Exec::Parallel).unwrap();
    assert_eq!(qt.summary.len(), 1);
    assert_eq!(qt.records.len(), 4);
    assert!(qt.runtime_checks().is_empty());
    assert!(qt.quality_checks().is_empty());
    let csv = qt.to_csv(&exp.config.metrics);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("solver,params,count,mean_mse,mean_psnr,mean_ssim,mean_residual,perceptual\n"));
}

struct SlowSink {
    calls: AtomicUsize,
}

impl OutputSink for SlowSink {
    fn reconstruction(&self, _: &JobKey, _: &SolveOutput) -> Result<()> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(40));
        Ok(())
    }
}

#[test]
fn timing_excludes_output_io() {
    let mut cfg = small_config();
    cfg.solvers = vec![SolverSpec::parse_name("wiener").unwrap()];
    let exp = Experiment::new(cfg).unwrap();
    let sink = SlowSink { calls: AtomicUsize::new(0) };
    let start = std::time::Instant::now();
    let recs = run_reconstruct(&exp, &exp.config.solvers[0], None, &sink, Exec::Sequential).unwrap();
    assert!(start.elapsed() >= Duration::from_millis(160));
    assert_eq!(sink.calls.load(Ordering::SeqCst), 4);
    for r in &recs {
        assert!(r.seconds < 0.02, "{}", r.seconds);
    }
}

#[test]
fn runs_are_reproducible_and_manifested() {
    let exp = Experiment::new(small_config()).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut texts = Vec::new();
    for d in &dirs {
        let qt = run_quality_vs_time(&exp, None, &FileSink { dir: d.path().join("recon") }, Exec::Parallel).unwrap();
        write_file(&d.path().join("records.csv"), &records_csv(&qt.records, &exp.config.metrics)).unwrap();
        write_file(&d.path().join(TIMING_DIR).join("records.csv"), &timing_csv(&qt.records)).unwrap();
        write_dataset(&exp, d.path()).unwrap();
        write_run_manifest(d.path(), "bench", &exp).unwrap();
        texts.push(std::fs::read_to_string(d.path().join(RUN_MANIFEST)).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let m: serde_json::Value = serde_json::from_str(&texts[0]).unwrap();
    let outputs = m["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("records.csv"));
    assert!(outputs.contains_key("recon/ddnm+/scene-0000.tensor"));
    assert!(outputs.contains_key("recon/ddnm+/scene-0000.trace.csv"));
    assert!(outputs.keys().all(|k| !k.starts_with("timing/")));
    assert_eq!(m["config"]["seed"], 0);

    // The config alone reproduces the run.
    let cfg: ExperimentConfig = serde_json::from_value(m["config"].clone()).unwrap();
    let again = Experiment::new(cfg).unwrap();
    assert_eq!(inputs_hash(&again), m["inputs_sha256"].as_str().unwrap());
    let mut other = small_config();
    other.seed = 1;
    assert_ne!(inputs_hash(&Experiment::new(other).unwrap()), inputs_hash(&again));
}
