//! Runs every CLI verb twice and compares the output trees byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const CONFIG: &str = r#"
seed = 7

[scenes]
kind = "piecewise_constant"
count = 3
height = 8
width = 8

[psf]
kind = "random_binary"
fill = 0.3

[noise]
sigma_n = 0.01

[prior]
kind = "learned"
scenes = 16
epochs = 2

[schedule]
steps = 10

[[solvers]]
name = "wiener"

[[solvers]]
name = "admm"
iters = 20

[[solvers]]
name = "ddnm+"

[[solvers]]
name = "nsdd"

[[solvers]]
name = "dps"
zeta = 0.2

[distill]
count = 12

[distill.teacher.schedule]
steps = 10

[distill.train]
epochs = 2

[sweep]
solver = "ddnm+"
param = "sigma_y"
"#;

fn files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

/// Every file under `root` outside `timing/` directories, sorted.
fn deterministic_files(root: &Path) -> Vec<PathBuf> {
    let mut all = Vec::new();
    files(root, root, &mut all);
    all.retain(|p| !p.components().any(|c| c.as_os_str() == "timing"));
    all.sort();
    all
}

fn run_all(bin: &Path, cfg: &Path, root: &Path) -> Result<(), String> {
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let c = s(cfg.to_path_buf());
    let mut jobs: Vec<Vec<String>> = vec![vec!["simulate".into(), "--config".into(), c.clone(), "--out".into(), s(root.join("simulate"))]];
    for (solver, extra) in [
        ("wiener", vec![]),
        ("admm", vec![]),
        ("ddnm", vec![]),
        ("ddnm+", vec!["--sigma-y", "0.3"]),
        ("dps", vec!["--zeta", "0.3", "--steps", "8"]),
    ] {
        let mut j = vec!["reconstruct".into(), "--config".into(), c.clone(), "--solver".into(), solver.into()];
        j.extend(["--out".into(), s(root.join(format!("reconstruct-{solver}")))]);
        j.extend(extra.iter().map(|e| e.to_string()));
        jobs.push(j);
    }
    jobs.push(vec!["sweep".into(), "--config".into(), c.clone(), "--out".into(), s(root.join("sweep"))]);
    jobs.push(vec!["bench".into(), "--config".into(), c.clone(), "--out".into(), s(root.join("bench"))]);
    jobs.push(vec!["distill".into(), "build-cache".into(), "--config".into(), c.clone(), "--cache".into(), s(root.join("cache"))]);
    jobs.push(vec![
        "distill".into(), "train".into(), "--config".into(), c.clone(), "--cache".into(), s(root.join("cache")),
        "--out".into(), s(root.join("student")),
    ]);
    jobs.push(vec![
        "distill".into(), "infer".into(), "--config".into(), c.clone(), "--student".into(), s(root.join("student")),
        "--out".into(), s(root.join("infer")),
    ]);
    jobs.push(vec![
        "reconstruct".into(), "--config".into(), c.clone(), "--solver".into(), "nsdd".into(), "--student".into(),
        s(root.join("student")), "--out".into(), s(root.join("reconstruct-nsdd")),
    ]);
    jobs.push(vec![
        "metrics".into(),
        "--estimate".into(), s(root.join("reconstruct-wiener/recon/wiener/scene-0000.tensor")),
        "--reference".into(), s(root.join("simulate/scenes/scene-0000.tensor")),
        "--measurement".into(), s(root.join("simulate/measurements/scene-0000.tensor")),
        "--config".into(), c.clone(),
        "--out".into(), s(root.join("metrics.csv")),
    ]);
    for args in jobs {
        let out = Command::new(bin).args(&args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{} exited with {:?}: {}",
                args[..2].join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    Ok(())
}

/// `(passed, detail)`
pub fn check(bin: &Path, work: &Path) -> (bool, String) {
    let cfg = work.join("config.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let (a, b) = (work.join("a"), work.join("b"));
    for root in [&a, &b] {
        if let Err(e) = run_all(bin, &cfg, root) {
            return (false, e);
        }
    }
    let (fa, fb) = (deterministic_files(&a), deterministic_files(&b));
    if fa != fb {
        return (false, format!("file lists differ: {} vs {} files", fa.len(), fb.len()));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    if differing.is_empty() {
        (true, format!("{} files identical across two runs of all verbs", fa.len()))
    } else {
        (false, format!("{} of {} files differ: {:?}", differing.len(), fa.len(), &differing[..differing.len().min(5)]))
    }
}
