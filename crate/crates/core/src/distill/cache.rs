use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{sha2_hex, DenoiserPrior, ScheduleConfig};
use crate::error::{Error, Result};
use crate::guidance::{ddnm_reconstruct, DdnmConfig, DdnmMode, SigmaYScale};
use crate::io::{read_tensor, write_tensor};
use crate::operator::{ConvolutionOperator, PinvMode, PseudoInverse};
use crate::parallel::{self, Exec};
use crate::rng::{fnv1a64, stage_seed, SeededRng};
use crate::tensor::ImageTensor;

const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "lensless-teacher-cache/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub schedule: ScheduleConfig,
    pub sigma_y: f64,
    pub sigma_y_scale: SigmaYScale,
    /// Base seed. Every item starts from the same `x_T` unless
    /// `per_item_seeds` is set.
    pub seed: u64,
    pub per_item_seeds: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            sigma_y: 0.6,
            sigma_y_scale: SigmaYScale::Raw,
            seed: 0,
            per_item_seeds: false,
        }
    }
}

impl TeacherConfig {
    pub fn ddnm(&self) -> DdnmConfig {
        DdnmConfig {
            sigma_y: self.sigma_y,
            mode: DdnmMode::Relaxed,
            sigma_y_scale: self.sigma_y_scale,
        }
    }

    pub fn item_seed(&self, id: &str) -> u64 {
        if self.per_item_seeds {
            stage_seed(self.seed, id)
        } else {
            self.seed
        }
    }
}

/// Held-out membership, fixed by the id alone (about one id in ten).
pub fn is_test_id(id: &str) -> bool {
    fnv1a64(id.as_bytes()) % 10 == 0
}

/// Hash of everything the student's conditioning depends on.
pub fn conditioning_hash(op: &ConvolutionOperator, pinv: &PseudoInverse) -> String {
    let v = serde_json::json!({ "operator": op.fingerprint(), "pinv": pinv.mode() });
    sha2_hex(v.to_string().into_bytes())[..16].to_string()
}

/// Hash of everything a teacher target depends on.
pub fn teacher_hash(
    cfg: &TeacherConfig,
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    prior: &dyn DenoiserPrior,
) -> String {
    let v = serde_json::json!({
        "teacher": cfg,
        "conditioning": conditioning_hash(op, pinv),
        "prior": prior.fingerprint(),
    });
    sha2_hex(v.to_string().into_bytes())[..16].to_string()
}

/// A measurement to distill, with its ground-truth scene when known.
#[derive(Debug, Clone)]
pub struct MeasurementItem {
    pub id: String,
    pub y: ImageTensor,
    pub reference: Option<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTarget {
    pub id: String,
    pub seed: u64,
    pub y: ImageTensor,
    pub target: ImageTensor,
    pub reference: Option<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub seed: u64,
    pub test: bool,
    pub y: String,
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format: String,
    pub hash: String,
    pub conditioning_hash: String,
    pub teacher: TeacherConfig,
    pub pinv: PinvMode,
    pub prior: String,
    pub operator: String,
    pub dims: [usize; 3],
    pub steps: usize,
    pub items: Vec<CacheEntry>,
}

#[derive(Debug, Clone)]
pub struct TeacherCache {
    pub dir: PathBuf,
    pub manifest: CacheManifest,
    pub items: Vec<TeacherTarget>,
}

fn manifest_hash_in(dir: &Path) -> Result<Option<String>> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CacheManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("unreadable cache manifest {}: {e}", path.display())))?;
    Ok(Some(m.hash))
}

/// Hash directories under `root` that hold a manifest, sorted.
fn existing_hashes(root: &Path) -> Result<Vec<(PathBuf, String)>> {
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            if let Some(h) = manifest_hash_in(&path)? {
                found.push((path, h));
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Runs the DDNM+ teacher on every item and writes
/// `root/<hash>/manifest.json` plus one tensor file per item and role.
///
/// Rebuilding with the same configuration rewrites identical bytes. A root
/// that already holds a cache for a different configuration is refused.
#[allow(clippy::too_many_arguments)]
pub fn build_teacher_cache(
    items: &[MeasurementItem],
    op: &ConvolutionOperator,
    pinv: &PseudoInverse,
    prior: &dyn DenoiserPrior,
    cfg: &TeacherConfig,
    root: &Path,
    exec: Exec,
) -> Result<TeacherCache> {
    if items.is_empty() {
        return Err(Error::Config("teacher cache needs at least one measurement".into()));
    }
    let mut seen = BTreeSet::new();
    for it in items {
        if it.id.is_empty() || it.id.contains(['/', '\\']) || it.id.starts_with('.') {
            return Err(Error::Config(format!("invalid measurement id {:?}", it.id)));
        }
        if !seen.insert(it.id.as_str()) {
            return Err(Error::Config(format!("duplicate measurement id {:?}", it.id)));
        }
        op.check(&it.y, "teacher measurement")?;
    }
    let sched = cfg.schedule.build()?;
    let hash = teacher_hash(cfg, op, pinv, prior);
    for (path, found) in existing_hashes(root)? {
        if found != hash {
            return Err(Error::StaleCache {
                path,
                found,
                expected: hash,
            });
        }
    }

    let ddnm = cfg.ddnm();
    let targets = parallel::try_map_indexed(exec, items.len(), |i| {
        let it = &items[i];
        let seed = cfg.item_seed(&it.id);
        let mut rng = SeededRng::new(seed);
        let (target, _) = ddnm_reconstruct(op, pinv, &it.y, prior, &sched, &ddnm, &mut rng)?;
        Ok::<_, Error>(TeacherTarget {
            id: it.id.clone(),
            seed,
            y: it.y.clone(),
            target,
            reference: it.reference.clone(),
        })
    })?;

    let dir = root.join(&hash);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(targets.len());
    for t in &targets {
        let y = format!("{}.y.tensor", t.id);
        let target = format!("{}.target.tensor", t.id);
        write_tensor(&dir.join(&y), &t.y)?;
        write_tensor(&dir.join(&target), &t.target)?;
        let reference = match &t.reference {
            Some(r) => {
                let name = format!("{}.reference.tensor", t.id);
                write_tensor(&dir.join(&name), r)?;
                Some(name)
            }
            None => None,
        };
        entries.push(CacheEntry {
            id: t.id.clone(),
            seed: t.seed,
            test: is_test_id(&t.id),
            y,
            target,
            reference,
        });
    }
    let d = op.dims();
    let manifest = CacheManifest {
        format: FORMAT.into(),
        hash,
        conditioning_hash: conditioning_hash(op, pinv),
        teacher: *cfg,
        pinv: pinv.mode(),
        prior: prior.fingerprint(),
        operator: op.fingerprint(),
        dims: [d.height, d.width, d.channels],
        steps: sched.steps(),
        items: entries,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(TeacherCache {
        dir,
        manifest,
        items: targets,
    })
}

impl TeacherCache {
    /// Loads the cache stored in `dir` (a hash directory).
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CacheManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("unreadable cache manifest {}: {e}", path.display())))?;
        if manifest.format != FORMAT {
            return Err(Error::Config(format!("unknown cache format {:?}", manifest.format)));
        }
        let mut items = Vec::with_capacity(manifest.items.len());
        for e in &manifest.items {
            items.push(TeacherTarget {
                id: e.id.clone(),
                seed: e.seed,
                y: read_tensor(&dir.join(&e.y))?,
                target: read_tensor(&dir.join(&e.target))?,
                reference: e.reference.as_ref().map(|r| read_tensor(&dir.join(r))).transpose()?,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            items,
        })
    }

    /// Loads the single cache under `root`.
    pub fn open(root: &Path) -> Result<Self> {
        let found = existing_hashes(root)?;
        match found.as_slice() {
            [(dir, _)] => Self::load(dir),
            [] => Err(Error::Config(format!("no teacher cache under {}", root.display()))),
            _ => Err(Error::Config(format!(
                "{} caches under {}; expected one",
                found.len(),
                root.display()
            ))),
        }
    }

    pub fn split(&self) -> (Vec<&TeacherTarget>, Vec<&TeacherTarget>) {
        self.items.iter().partition(|t| !is_test_id(&t.id))
    }
}
