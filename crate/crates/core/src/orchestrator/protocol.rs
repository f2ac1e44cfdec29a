//! The segmenter boundary.
//!
//! A segmenter is anything that can be trained on patch/target pairs and
//! then produce one probability mask per patch. External segmenters are
//! driven through a JSON manifest plus "SGT1" tensor files:
//!
//! ```text
//! <command...> train   --manifest <dir>/manifest.json
//! <command...> predict --manifest <dir>/manifest.json
//! ```
//!
//! Exit status 0 means every output promised by the manifest (`model` for
//! training, each entry of `outputs` for prediction) has been written.
//! Relative paths inside a manifest are resolved against its directory.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::patchgrid::{extract_patches, plan_grid, reconstruct};
use crate::segmenter::{self, PixelModel, TrainConfig, TrainHistory, TrainPatch, ValImage};
use crate::tensor::{save_tensor_file, Tensor};
use crate::types::{BinaryMask, MultiChannelImage, ProbabilityMask, Raster};

pub const MANIFEST_VERSION: u32 = 1;
pub const HISTORY_FILE: &str = "history.json";

/// Stable name of patch `index` of acquisition `acq` in `dataset`.
pub fn patch_id(dataset: &str, acq: &str, index: usize) -> String {
    format!("{dataset}/{acq}#{index:04}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Train,
    Predict,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Train => "train",
            Task::Predict => "predict",
        }
    }
}

/// A run of consecutive validation patches tiling one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValGroup {
    pub width: usize,
    pub height: usize,
    pub first: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterManifest {
    pub version: u32,
    pub task: Task,
    pub channels: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub patches: Vec<PathBuf>,
    #[serde(default)]
    pub patch_ids: Vec<String>,
    #[serde(default)]
    pub targets: Vec<PathBuf>,
    #[serde(default)]
    pub val_patches: Vec<PathBuf>,
    #[serde(default)]
    pub val_targets: Vec<PathBuf>,
    #[serde(default)]
    pub val_groups: Vec<ValGroup>,
    pub model: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
    /// Opaque to the orchestrator; the built-in segmenter reads a TrainConfig.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

fn violation(path: &Path, detail: impl Into<String>) -> Error {
    Error::Protocol {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

impl SegmenterManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Parse, resolve relative paths, and check internal consistency.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: SegmenterManifest = serde_json::from_slice(&bytes)
            .map_err(|e| violation(path, format!("unparseable manifest: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        m.patches.iter_mut().for_each(fix);
        m.targets.iter_mut().for_each(fix);
        m.val_patches.iter_mut().for_each(fix);
        m.val_targets.iter_mut().for_each(fix);
        m.outputs.iter_mut().for_each(fix);
        fix(&mut m.model);
        fix(&mut m.output_dir);
        m.check(path)?;
        Ok(m)
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(violation(path, format!("unsupported manifest version {}", self.version)));
        }
        if self.patch_size == 0 {
            return Err(violation(path, "patch_size is 0"));
        }
        if !self.patch_ids.is_empty() && self.patch_ids.len() != self.patches.len() {
            return Err(violation(path, "patch_ids and patches differ in length"));
        }
        match self.task {
            Task::Train => {
                if self.targets.len() != self.patches.len() {
                    return Err(violation(path, "targets and patches differ in length"));
                }
                if self.val_targets.len() != self.val_patches.len() {
                    return Err(violation(path, "val_targets and val_patches differ in length"));
                }
                let mut next = 0;
                for g in &self.val_groups {
                    let expected = plan_grid(g.width, g.height, self.patch_size).len();
                    if g.first != next || g.count != expected {
                        return Err(violation(
                            path,
                            format!("val group {g:?} does not tile the patch list"),
                        ));
                    }
                    next += g.count;
                }
                if next != self.val_patches.len() {
                    return Err(violation(path, "val_groups do not cover val_patches"));
                }
            }
            Task::Predict => {
                if self.outputs.len() != self.patches.len() {
                    return Err(violation(path, "outputs and patches differ in length"));
                }
            }
        }
        for f in self
            .patches
            .iter()
            .chain(&self.targets)
            .chain(&self.val_patches)
            .chain(&self.val_targets)
        {
            if !f.is_file() {
                return Err(violation(f, "referenced input file does not exist"));
            }
        }
        Ok(())
    }
}

pub struct TrainJob<'a> {
    pub patch_ids: &'a [String],
    pub patches: &'a [MultiChannelImage],
    pub targets: &'a [BinaryMask],
    pub val: &'a [ValImage],
    pub seed: u64,
    pub workdir: &'a Path,
}

pub struct PredictJob<'a> {
    pub patch_ids: &'a [String],
    pub patches: &'a [MultiChannelImage],
    pub workdir: &'a Path,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Pixel(PixelModel),
    File(PathBuf),
    Memorized(HashMap<String, BinaryMask>),
    Oracle,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TrainedModel,
    pub history: Option<TrainHistory>,
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn train(&self, job: &TrainJob) -> Result<Trained>;
    fn predict(&self, model: &Trained, job: &PredictJob) -> Result<Vec<ProbabilityMask>>;
}

fn wrong_model(who: &str) -> Error {
    Error::InvalidConfig(format!("{who} segmenter was handed a model it did not train"))
}

/// The pixel-linear model, in process.
#[derive(Debug, Clone)]
pub struct BuiltinSegmenter {
    pub config: TrainConfig,
}

impl Segmenter for BuiltinSegmenter {
    fn name(&self) -> &str {
        "builtin"
    }

    fn train(&self, job: &TrainJob) -> Result<Trained> {
        let patches: Vec<TrainPatch> = job
            .patches
            .iter()
            .zip(job.targets)
            .map(|(image, target)| TrainPatch {
                image: image.clone(),
                target: target.clone(),
            })
            .collect();
        let cfg = TrainConfig {
            seed: job.seed,
            ..self.config
        };
        let (model, history) = segmenter::train(&patches, job.val, &cfg)?;
        Ok(Trained {
            model: TrainedModel::Pixel(model),
            history: Some(history),
        })
    }

    fn predict(&self, model: &Trained, job: &PredictJob) -> Result<Vec<ProbabilityMask>> {
        let TrainedModel::Pixel(m) = &model.model else {
            return Err(wrong_model("builtin"));
        };
        use rayon::prelude::*;
        job.patches.par_iter().map(|p| segmenter::predict(m, p)).collect()
    }
}

/// Returns the pristine ground truth of every patch it is asked about.
#[derive(Debug, Clone, Default)]
pub struct OracleSegmenter {
    truth: HashMap<String, BinaryMask>,
}

impl OracleSegmenter {
    pub fn new(truth: HashMap<String, BinaryMask>) -> Self {
        Self { truth }
    }
}

impl Segmenter for OracleSegmenter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn train(&self, _job: &TrainJob) -> Result<Trained> {
        Ok(Trained {
            model: TrainedModel::Oracle,
            history: None,
        })
    }

    fn predict(&self, model: &Trained, job: &PredictJob) -> Result<Vec<ProbabilityMask>> {
        if !matches!(model.model, TrainedModel::Oracle) {
            return Err(wrong_model("oracle"));
        }
        job.patch_ids
            .iter()
            .map(|id| {
                self.truth
                    .get(id)
                    .map(BinaryMask::to_probability)
                    .ok_or_else(|| Error::InvalidConfig(format!("oracle has no ground truth for {id}")))
            })
            .collect()
    }
}

/// Predicts the targets it was trained on; unseen patches get all-zero masks.
#[derive(Debug, Clone, Default)]
pub struct IdentitySegmenter;

impl Segmenter for IdentitySegmenter {
    fn name(&self) -> &str {
        "identity"
    }

    fn train(&self, job: &TrainJob) -> Result<Trained> {
        let memo = job
            .patch_ids
            .iter()
            .cloned()
            .zip(job.targets.iter().cloned())
            .collect();
        Ok(Trained {
            model: TrainedModel::Memorized(memo),
            history: None,
        })
    }

    fn predict(&self, model: &Trained, job: &PredictJob) -> Result<Vec<ProbabilityMask>> {
        let TrainedModel::Memorized(memo) = &model.model else {
            return Err(wrong_model("identity"));
        };
        Ok(job
            .patch_ids
            .iter()
            .zip(job.patches)
            .map(|(id, p)| match memo.get(id) {
                Some(t) => t.to_probability(),
                None => BinaryMask::zeros(p.width(), p.height()).to_probability(),
            })
            .collect())
    }
}

/// An external program speaking the manifest protocol.
#[derive(Debug, Clone)]
pub struct CommandSegmenter {
    pub command: Vec<String>,
    pub timeout: Duration,
    pub patch_size: usize,
    pub train_config: Option<serde_json::Value>,
}

fn write_all<T: crate::tensor::ToTensor>(dir: &Path, items: &[T]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let p = dir.join(format!("{i:05}.sgt"));
            save_tensor_file(&p, x)?;
            Ok(p)
        })
        .collect()
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn stderr_tail(path: &Path, lines: usize) -> String {
    let mut buf = Vec::new();
    if let Ok(mut f) = File::open(path) {
        let len = f.metadata().map(|m| m.len()).unwrap_or(0);
        let _ = f.seek(SeekFrom::Start(len.saturating_sub(8192)));
        let _ = f.read_to_end(&mut buf);
    }
    let text = String::from_utf8_lossy(&buf);
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

impl CommandSegmenter {
    fn run(&self, task: Task, manifest: &Path, logdir: &Path) -> Result<()> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::InvalidConfig("empty segmenter command".into()))?;
        let out_log = logdir.join(format!("{}.stdout.log", task.as_str()));
        let err_log = logdir.join(format!("{}.stderr.log", task.as_str()));
        let stdout = File::create(&out_log).map_err(|e| Error::io(&out_log, e))?;
        let stderr = File::create(&err_log).map_err(|e| Error::io(&err_log, e))?;
        log::info!("running {program} {}", task.as_str());
        let mut child = Command::new(program)
            .args(args)
            .arg(task.as_str())
            .arg("--manifest")
            .arg(manifest)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let status = match child.wait_timeout(self.timeout).map_err(|e| Error::io(program, e))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::SegmenterTimeout(self.timeout.as_secs()));
            }
        };
        if !status.success() {
            return Err(Error::SegmenterExit {
                code: status.code(),
                stderr_tail: stderr_tail(&err_log, 20),
            });
        }
        Ok(())
    }
}

impl Segmenter for CommandSegmenter {
    fn name(&self) -> &str {
        "command"
    }

    fn train(&self, job: &TrainJob) -> Result<Trained> {
        let dir = absolute(&job.workdir.join("train"))?;
        let channels = job.patches.first().map_or(0, |p| p.channels());
        let patches = write_all(&dir.join("patches"), job.patches)?;
        let targets = write_all(&dir.join("targets"), job.targets)?;
        let mut val_images = Vec::new();
        let mut val_masks = Vec::new();
        let mut groups = Vec::new();
        for v in job.val {
            groups.push(ValGroup {
                width: v.grid.orig_w,
                height: v.grid.orig_h,
                first: val_images.len(),
                count: v.patches.len(),
            });
            val_images.extend(v.patches.iter().cloned());
            val_masks.extend(extract_patches(&v.target, &v.grid)?);
        }
        let manifest = SegmenterManifest {
            version: MANIFEST_VERSION,
            task: Task::Train,
            channels,
            patch_size: self.patch_size,
            seed: job.seed,
            patches,
            patch_ids: job.patch_ids.to_vec(),
            targets,
            val_patches: write_all(&dir.join("val_patches"), &val_images)?,
            val_targets: write_all(&dir.join("val_targets"), &val_masks)?,
            val_groups: groups,
            model: dir.join("model.bin"),
            output_dir: dir.join("out"),
            outputs: Vec::new(),
            train_config: self.train_config.clone(),
        };
        fs::create_dir_all(&manifest.output_dir).map_err(|e| Error::io(&manifest.output_dir, e))?;
        let _ = fs::remove_file(&manifest.model);
        let mpath = dir.join("manifest.json");
        manifest.save(&mpath)?;
        self.run(Task::Train, &mpath, &dir)?;
        if !manifest.model.is_file() {
            return Err(violation(&manifest.model, "promised model file was not written"));
        }
        let hpath = manifest.output_dir.join(HISTORY_FILE);
        let history = match fs::read(&hpath) {
            Ok(b) => Some(
                serde_json::from_slice(&b).map_err(|e| violation(&hpath, e.to_string()))?,
            ),
            Err(_) => None,
        };
        Ok(Trained {
            model: TrainedModel::File(manifest.model),
            history,
        })
    }

    fn predict(&self, model: &Trained, job: &PredictJob) -> Result<Vec<ProbabilityMask>> {
        let TrainedModel::File(model_path) = &model.model else {
            return Err(wrong_model("command"));
        };
        let dir = absolute(&job.workdir.join("predict"))?;
        let out_dir = dir.join("outputs");
        if out_dir.exists() {
            fs::remove_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        }
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let manifest = SegmenterManifest {
            version: MANIFEST_VERSION,
            task: Task::Predict,
            channels: job.patches.first().map_or(0, |p| p.channels()),
            patch_size: self.patch_size,
            seed: 0,
            patches: write_all(&dir.join("patches"), job.patches)?,
            patch_ids: job.patch_ids.to_vec(),
            targets: Vec::new(),
            val_patches: Vec::new(),
            val_targets: Vec::new(),
            val_groups: Vec::new(),
            model: model_path.clone(),
            output_dir: out_dir.clone(),
            outputs: (0..job.patches.len())
                .map(|i| out_dir.join(format!("{i:05}.sgt")))
                .collect(),
            train_config: None,
        };
        let mpath = dir.join("manifest.json");
        manifest.save(&mpath)?;
        self.run(Task::Predict, &mpath, &dir)?;
        manifest
            .outputs
            .iter()
            .zip(job.patches)
            .map(|(path, patch)| read_prediction(path, patch.dims()))
            .collect()
    }
}

/// Load one promised probability mask and check its geometry.
pub fn read_prediction(path: &Path, dims: (usize, usize)) -> Result<ProbabilityMask> {
    if !path.is_file() {
        return Err(violation(path, "promised output was not written"));
    }
    let mask = Tensor::read(path)
        .and_then(Tensor::into_probability_mask)
        .map_err(|e| violation(path, format!("unreadable probability mask: {e}")))?;
    if mask.dims() != dims {
        return Err(violation(
            path,
            format!("probability mask is {:?}, expected {:?}", mask.dims(), dims),
        ));
    }
    Ok(mask)
}

fn read_images(paths: &[PathBuf]) -> Result<Vec<MultiChannelImage>> {
    paths.iter().map(|p| Tensor::read(p)?.into_image()).collect()
}

fn read_masks(paths: &[PathBuf]) -> Result<Vec<BinaryMask>> {
    paths.iter().map(|p| Tensor::read(p)?.into_binary_mask()).collect()
}

/// Serve one protocol request with the built-in segmenter.
pub fn serve_builtin(task: Task, manifest_path: &Path) -> Result<()> {
    let m = SegmenterManifest::load(manifest_path)?;
    if m.task != task {
        return Err(violation(
            manifest_path,
            format!("manifest is for {:?}, invoked as {:?}", m.task, task),
        ));
    }
    fs::create_dir_all(&m.output_dir).map_err(|e| Error::io(&m.output_dir, e))?;
    match task {
        Task::Train => {
            let mut cfg: TrainConfig = match &m.train_config {
                Some(v) => serde_json::from_value(v.clone())?,
                None => TrainConfig::default(),
            };
            cfg.seed = m.seed;
            let images = read_images(&m.patches)?;
            let targets = read_masks(&m.targets)?;
            let train: Vec<TrainPatch> = images
                .into_iter()
                .zip(targets)
                .map(|(image, target)| TrainPatch { image, target })
                .collect();
            let val_images = read_images(&m.val_patches)?;
            let val_masks = read_masks(&m.val_targets)?;
            let val = m
                .val_groups
                .iter()
                .map(|g| {
                    let grid = plan_grid(g.width, g.height, m.patch_size);
                    let range = g.first..g.first + g.count;
                    Ok(ValImage {
                        target: reconstruct(&val_masks[range.clone()], &grid)?,
                        patches: val_images[range].to_vec(),
                        grid,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = train.first() {
                if p.image.channels() != m.channels {
                    return Err(Error::ChannelMismatch {
                        expected: m.channels,
                        actual: p.image.channels(),
                    });
                }
            }
            let (model, history) = segmenter::train(&train, &val, &cfg)?;
            model.save(&m.model)?;
            let hpath = m.output_dir.join(HISTORY_FILE);
            fs::write(&hpath, serde_json::to_vec_pretty(&history)?).map_err(|e| Error::io(&hpath, e))
        }
        Task::Predict => {
            let model = PixelModel::load(&m.model)?;
            if model.channels != m.channels {
                return Err(Error::ChannelMismatch {
                    expected: model.channels,
                    actual: m.channels,
                });
            }
            for (src, dst) in m.patches.iter().zip(&m.outputs) {
                let image = Tensor::read(src)?.into_image()?;
                let probs = segmenter::predict(&model, &image)?;
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                save_tensor_file(dst, &probs)?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(w: usize, h: usize, v: f32) -> MultiChannelImage {
        MultiChannelImage::unnamed(w, h, 1, vec![v; w * h]).unwrap()
    }

    #[test]
    fn identity_memorizes_and_zeroes_unseen() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let patches = vec![patch(2, 2, 1.0), patch(2, 2, 0.0)];
        let targets = vec![BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap(), BinaryMask::zeros(2, 2)];
        let dir = tempfile::tempdir().unwrap();
        let job = TrainJob {
            patch_ids: &ids,
            patches: &patches,
            targets: &targets,
            val: &[],
            seed: 0,
            workdir: dir.path(),
        };
        let seg = IdentitySegmenter;
        let model = seg.train(&job).unwrap();
        let q = vec!["a".to_string(), "zz".to_string()];
        let out = seg
            .predict(&model, &PredictJob { patch_ids: &q, patches: &patches, workdir: dir.path() })
            .unwrap();
        assert_eq!(out[0].values(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(out[1].values(), &[0.0; 4]);
    }

    #[test]
    fn oracle_refuses_unknown_patch() {
        let seg = OracleSegmenter::new(HashMap::new());
        let dir = tempfile::tempdir().unwrap();
        let model = Trained { model: TrainedModel::Oracle, history: None };
        let ids = vec!["x".to_string()];
        let patches = vec![patch(1, 1, 0.0)];
        assert!(seg
            .predict(&model, &PredictJob { patch_ids: &ids, patches: &patches, workdir: dir.path() })
            .is_err());
    }

    #[test]
    fn manifest_consistency_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.sgt");
        save_tensor_file(&p, &patch(4, 4, 0.0)).unwrap();
        let mut m = SegmenterManifest {
            version: MANIFEST_VERSION,
            task: Task::Predict,
            channels: 1,
            patch_size: 4,
            seed: 0,
            patches: vec!["p.sgt".into()],
            patch_ids: vec![],
            targets: vec![],
            val_patches: vec![],
            val_targets: vec![],
            val_groups: vec![],
            model: "m.bin".into(),
            output_dir: "out".into(),
            outputs: vec!["out/0.sgt".into()],
            train_config: None,
        };
        let mp = dir.path().join("m.json");
        m.save(&mp).unwrap();
        let loaded = SegmenterManifest::load(&mp).unwrap();
        assert_eq!(loaded.patches[0], dir.path().join("p.sgt"));

        m.outputs.clear();
        m.save(&mp).unwrap();
        assert!(matches!(SegmenterManifest::load(&mp), Err(Error::Protocol { .. })));

        m.outputs = vec!["o".into()];
        m.patches = vec!["missing.sgt".into()];
        m.save(&mp).unwrap();
        match SegmenterManifest::load(&mp) {
            Err(Error::Protocol { path, .. }) => assert!(path.ends_with("missing.sgt")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_sized_prediction_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("00003.sgt");
        save_tensor_file(&p, &ProbabilityMask::new(3, 2, vec![0.5; 6]).unwrap()).unwrap();
        match read_prediction(&p, (4, 4)) {
            Err(e @ Error::Protocol { .. }) => assert!(e.to_string().contains("00003.sgt")),
            other => panic!("{other:?}"),
        }
        assert!(read_prediction(&p, (3, 2)).is_ok());
        assert!(read_prediction(&dir.path().join("nope.sgt"), (3, 2)).is_err());
    }
}
