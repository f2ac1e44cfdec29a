use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetRef, ExperimentConfig, MergeMode, RelabelMode, SegmenterKind};
use super::protocol::{
    patch_id, BuiltinSegmenter, CommandSegmenter, IdentitySegmenter, OracleSegmenter, PredictJob,
    Segmenter, Trained, TrainJob,
};
use super::store::{write_atomic, Store};
use crate::corruption::{erase_cells, relabel_components, resegment_cells_with};
use crate::error::{Error, Result};
use crate::ingest::{load_dataset, percentile_normalize, select_channels, split_dataset, DatasetSplit};
use crate::metrics::{aggregate, evaluate, summarize, threshold, SummaryStats};
use crate::patchgrid::{extract_patches, plan_grid, reconstruct, PatchGrid};
use crate::rng::derive_seed;
use crate::segmenter::ValImage;
use crate::tensor::{save_tensor_file, Tensor};
use crate::types::{BinaryMask, InstanceMask, MetricsReport, MultiChannelImage, Raster, TransferDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "sweep_mc")]
    CorruptionSweep,
    #[serde(rename = "sweep_uo")]
    UnderOverSweep,
    #[serde(rename = "transfer")]
    Transfer,
    #[serde(rename = "bootstrap")]
    Bootstrap,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::CorruptionSweep => "sweep_mc",
            ExperimentKind::UnderOverSweep => "sweep_uo",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Pristine,
    Corrupted { missing_fraction: f64, k_max: u32 },
    Bootstrap { iteration: usize },
}

/// Where a mask used by one model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTag {
    pub model: String,
    pub dataset: String,
    pub acquisition: String,
    pub split: SplitName,
    /// `target` for training/validation targets, `reference` for evaluation GT.
    pub role: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub dataset: String,
    pub image: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub missing_fraction: f64,
    pub k_max: u32,
    pub iteration: Option<usize>,
    pub images: Vec<ImageResult>,
    pub aggregate: MetricsReport,
    pub dsc: SummaryStats,
    pub best_epoch: Option<usize>,
    pub best_val_dsc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub missing_fraction: f64,
    #[serde(flatten)]
    pub delta: TransferDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub iteration: usize,
    pub test_dsc: f64,
    /// Training-target pixels that differ from the previous iteration's targets.
    pub changed_pixels: u64,
    /// Pooled DSC of the training targets against pristine training GT.
    pub target_dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub segmenter: String,
    pub models: Vec<ModelResult>,
    #[serde(default)]
    pub transfer: Vec<TransferRow>,
    #[serde(default)]
    pub bootstrap: Vec<BootstrapRow>,
    #[serde(default)]
    pub converged_at: Option<usize>,
    pub provenance: Vec<ArtifactTag>,
}

impl ExperimentResult {
    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.model == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    model: ModelResult,
    provenance: Vec<ArtifactTag>,
    #[serde(default)]
    bootstrap: Option<BootstrapRow>,
}

/// An acquisition after channel selection, normalisation and tiling.
#[derive(Debug, Clone)]
pub struct PreparedAcq {
    pub id: String,
    pub gt: InstanceMask,
    pub grid: PatchGrid,
    pub patches: Vec<MultiChannelImage>,
    pub patch_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub channels: usize,
    pub acqs: Vec<PreparedAcq>,
    pub split: DatasetSplit,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedDataset {
    fn indices(&self, split: SplitName) -> &[usize] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    fn pristine(&self, split: SplitName) -> Vec<BinaryMask> {
        self.indices(split).iter().map(|&i| self.acqs[i].gt.binarize()).collect()
    }
}

fn needs_relabel(mode: RelabelMode, mask: &InstanceMask) -> bool {
    match mode {
        RelabelMode::Always => true,
        RelabelMode::Never => false,
        RelabelMode::Auto => mask.labels().iter().all(|&l| l <= 1),
    }
}

pub fn prepare_dataset(dref: &DatasetRef, cfg: &ExperimentConfig) -> Result<PreparedDataset> {
    let ds = load_dataset(&dref.manifest)?;
    let connectivity = cfg.connectivity_mode().unwrap_or_default();
    let name = ds.name.clone();
    let acqs = ds
        .acquisitions
        .into_par_iter()
        .map(|a| {
            let image = match &dref.channels {
                Some(names) => select_channels(&a.image, names)?,
                None => a.image,
            };
            let image = percentile_normalize(&image, cfg.normalize_percentile)?;
            let gt = if needs_relabel(cfg.relabel, &a.gt_mask) {
                relabel_components(&a.gt_mask, connectivity)
            } else {
                a.gt_mask
            };
            let grid = plan_grid(image.width(), image.height(), cfg.patch_size);
            let patches = extract_patches(&image, &grid)?;
            let patch_ids = (0..patches.len()).map(|k| patch_id(&name, &a.id, k)).collect();
            Ok((
                PreparedAcq {
                    id: a.id,
                    gt,
                    grid,
                    patches,
                    patch_ids,
                },
                a.stratum,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = acqs.first().map_or(0, |(a, _)| a.patches[0].channels());
    let items: Vec<(String, String)> = acqs.iter().map(|(a, s)| (a.id.clone(), s.clone())).collect();
    let split = split_dataset(
        &items,
        cfg.split.ratios,
        derive_seed(cfg.seed, "split", &name),
        cfg.split.stratified,
    )?;
    let acqs: Vec<PreparedAcq> = acqs.into_iter().map(|(a, _)| a).collect();
    let pos: HashMap<&str, usize> = acqs.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let lookup = |ids: &[String]| ids.iter().map(|id| pos[id.as_str()]).collect::<Vec<_>>();
    let (train, val, test) = (lookup(&split.train), lookup(&split.val), lookup(&split.test));
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "dataset {name} split {}/{}/{} leaves a split empty",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok(PreparedDataset {
        name,
        channels,
        acqs,
        split,
        train,
        val,
        test,
    })
}

/// Training and validation targets for one dataset, aligned with its split.
#[derive(Debug, Clone)]
struct Targets {
    train: Vec<BinaryMask>,
    val: Vec<BinaryMask>,
    train_provenance: Provenance,
    val_provenance: Provenance,
}

fn pct(p: f64) -> String {
    let s = format!("{:.2}", p * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn mean_dsc(images: &[ImageResult]) -> f64 {
    images.iter().map(|r| r.metrics.dsc).sum::<f64>() / images.len() as f64
}

fn differing(a: &[BinaryMask], b: &[BinaryMask]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.bits().iter().zip(y.bits()).filter(|(p, q)| p != q).count() as u64)
        .sum()
}

fn union(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    let bits = a.bits().iter().zip(b.bits()).map(|(x, y)| x | y).collect();
    BinaryMask::new(a.width(), a.height(), bits).expect("same geometry")
}

pub struct Runner {
    cfg: ExperimentConfig,
    out: PathBuf,
    store: Store,
    datasets: Vec<PreparedDataset>,
    segmenter: Box<dyn Segmenter>,
    tags: Mutex<Vec<ArtifactTag>>,
}

impl Runner {
    /// Load and prepare every dataset, then build the configured segmenter.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let datasets = cfg
            .datasets
            .iter()
            .map(|d| prepare_dataset(d, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let segmenter: Box<dyn Segmenter> = match cfg.segmenter.kind {
            SegmenterKind::Builtin => Box::new(BuiltinSegmenter { config: cfg.train }),
            SegmenterKind::Identity => Box::new(IdentitySegmenter),
            SegmenterKind::Command => Box::new(CommandSegmenter {
                command: cfg.segmenter.command.clone(),
                timeout: Duration::from_secs(cfg.segmenter.timeout_secs),
                patch_size: cfg.patch_size,
                train_config: Some(serde_json::to_value(cfg.train)?),
            }),
            SegmenterKind::Oracle => {
                let mut truth = HashMap::new();
                for d in &datasets {
                    for a in &d.acqs {
                        let tiles = extract_patches(&a.gt.binarize(), &a.grid)?;
                        truth.extend(a.patch_ids.iter().cloned().zip(tiles));
                    }
                }
                Box::new(OracleSegmenter::new(truth))
            }
        };
        Self::with_segmenter(cfg, out, datasets, segmenter)
    }

    pub fn with_segmenter(
        cfg: ExperimentConfig,
        out: impl Into<PathBuf>,
        datasets: Vec<PreparedDataset>,
        segmenter: Box<dyn Segmenter>,
    ) -> Result<Self> {
        let out = out.into();
        let store = Store::open(out.join("store"))?;
        Ok(Self {
            cfg,
            out,
            store,
            datasets,
            segmenter,
            tags: Mutex::new(Vec::new()),
        })
    }

    pub fn datasets(&self) -> &[PreparedDataset] {
        &self.datasets
    }

    pub fn run(&self, kind: ExperimentKind) -> Result<ExperimentResult> {
        self.tags.lock().expect("tag lock").clear();
        let mut result = match kind {
            ExperimentKind::CorruptionSweep => self.corruption_sweep()?,
            ExperimentKind::UnderOverSweep => self.underover_sweep()?,
            ExperimentKind::Transfer => self.transfer()?,
            ExperimentKind::Bootstrap => self.bootstrap()?,
        };
        result.provenance = std::mem::take(&mut *self.tags.lock().expect("tag lock"));
        write_results(&self.out, &result)?;
        Ok(result)
    }

    fn seed(&self, stage: &str, param: &str) -> u64 {
        derive_seed(self.cfg.seed, stage, param)
    }

    /// Targets for the training and validation splits after erasing
    /// `missing` of the cells and, for `k_max > 0`, resegmenting the rest.
    fn corrupt(&self, ds: &PreparedDataset, missing: f64, k_max: u32) -> Result<Targets> {
        let level = format!("{missing}/{k_max}");
        let one = |split: SplitName| -> Result<Vec<BinaryMask>> {
            if split == SplitName::Test {
                return Err(Error::InvalidConfig("test ground truth is never corrupted".into()));
            }
            ds.indices(split)
                .par_iter()
                .map(|&i| {
                    let a = &ds.acqs[i];
                    let param = format!("{missing}/{}/{}", ds.name, a.id);
                    let mut m = erase_cells(&a.gt, missing, self.seed("erase", &param));
                    if k_max > 0 {
                        let param = format!("{k_max}/{}/{}", ds.name, a.id);
                        m = resegment_cells_with(
                            &m,
                            k_max,
                            self.seed("resegment", &param),
                            self.cfg.resegment_policy,
                        )?;
                    }
                    Ok(m.binarize())
                })
                .collect()
        };
        log::debug!("corrupting {} at {level}", ds.name);
        let corrupted = Provenance::Corrupted {
            missing_fraction: missing,
            k_max,
        };
        let (val, val_provenance) = if self.cfg.corrupt_validation {
            (one(SplitName::Val)?, corrupted)
        } else {
            (ds.pristine(SplitName::Val), Provenance::Pristine)
        };
        Ok(Targets {
            train: one(SplitName::Train)?,
            val,
            train_provenance: corrupted,
            val_provenance,
        })
    }

    fn tag_targets(&self, model: &str, ds: &PreparedDataset, t: &Targets) -> Vec<ArtifactTag> {
        let mut tags = Vec::new();
        for (split, prov) in [(SplitName::Train, t.train_provenance), (SplitName::Val, t.val_provenance)] {
            for &i in ds.indices(split) {
                tags.push(ArtifactTag {
                    model: model.to_string(),
                    dataset: ds.name.clone(),
                    acquisition: ds.acqs[i].id.clone(),
                    split,
                    role: "target".into(),
                    provenance: prov,
                });
            }
        }
        tags
    }

    fn tag_references(&self, model: &str, ds: &PreparedDataset) -> Vec<ArtifactTag> {
        ds.test
            .iter()
            .map(|&i| ArtifactTag {
                model: model.to_string(),
                dataset: ds.name.clone(),
                acquisition: ds.acqs[i].id.clone(),
                split: SplitName::Test,
                role: "reference".into(),
                provenance: Provenance::Pristine,
            })
            .collect()
    }

    fn fit(&self, model: &str, parts: &[(&PreparedDataset, &Targets)], seed: u64) -> Result<Trained> {
        let mut ids = Vec::new();
        let mut patches = Vec::new();
        let mut targets = Vec::new();
        let mut val = Vec::new();
        for (ds, t) in parts {
            for (&i, target) in ds.train.iter().zip(&t.train) {
                let a = &ds.acqs[i];
                ids.extend(a.patch_ids.iter().cloned());
                patches.extend(a.patches.iter().cloned());
                targets.extend(extract_patches(target, &a.grid)?);
            }
            for (&i, target) in ds.val.iter().zip(&t.val) {
                let a = &ds.acqs[i];
                val.push(ValImage {
                    grid: a.grid,
                    patches: a.patches.clone(),
                    target: target.clone(),
                });
            }
        }
        let workdir = self.out.join("work").join(model);
        log::info!("training {model} on {} patches", patches.len());
        self.segmenter.train(&TrainJob {
            patch_ids: &ids,
            patches: &patches,
            targets: &targets,
            val: &val,
            seed,
            workdir: &workdir,
        })
    }

    /// Reconstructed, thresholded predictions for acquisitions `idx`.
    fn predict_masks(
        &self,
        model: &str,
        trained: &Trained,
        ds: &PreparedDataset,
        idx: &[usize],
        stage: &str,
    ) -> Result<Vec<BinaryMask>> {
        let mut ids = Vec::new();
        let mut patches = Vec::new();
        for &i in idx {
            ids.extend(ds.acqs[i].patch_ids.iter().cloned());
            patches.extend(ds.acqs[i].patches.iter().cloned());
        }
        let workdir = self.out.join("work").join(model).join(stage);
        let probs = self.segmenter.predict(
            trained,
            &PredictJob {
                patch_ids: &ids,
                patches: &patches,
                workdir: &workdir,
            },
        )?;
        if probs.len() != patches.len() {
            return Err(Error::PatchCount {
                expected: patches.len(),
                actual: probs.len(),
            });
        }
        let mut out = Vec::with_capacity(idx.len());
        let mut offset = 0;
        for &i in idx {
            let a = &ds.acqs[i];
            let n = a.patches.len();
            let full = reconstruct(&probs[offset..offset + n], &a.grid)?;
            out.push(threshold(&full, self.cfg.train.threshold));
            offset += n;
        }
        Ok(out)
    }

    fn evaluate_on(
        &self,
        model: &str,
        trained: &Trained,
        ds: &PreparedDataset,
    ) -> Result<Vec<ImageResult>> {
        let preds = self.predict_masks(model, trained, ds, &ds.test, "test")?;
        let reference = ds.pristine(SplitName::Test);
        ds.test
            .iter()
            .zip(preds.iter().zip(&reference))
            .map(|(&i, (p, g))| {
                Ok(ImageResult {
                    dataset: ds.name.clone(),
                    image: ds.acqs[i].id.clone(),
                    metrics: evaluate(p, g)?,
                })
            })
            .collect()
    }

    fn model_result(
        &self,
        model: &str,
        missing: f64,
        k_max: u32,
        trained: &Trained,
        images: Vec<ImageResult>,
    ) -> Result<ModelResult> {
        let reports: Vec<MetricsReport> = images.iter().map(|r| r.metrics).collect();
        let dscs: Vec<f64> = reports.iter().map(|r| r.dsc).collect();
        Ok(ModelResult {
            model: model.to_string(),
            missing_fraction: missing,
            k_max,
            iteration: None,
            aggregate: aggregate(&reports, self.cfg.aggregation)?,
            dsc: summarize(&dscs)?,
            images,
            best_epoch: trained.history.as_ref().map(|h| h.best_epoch),
            best_val_dsc: trained.history.as_ref().map(|h| h.best_val_dsc),
        })
    }

    /// Run a stage unless the store already holds its result.
    fn staged(
        &self,
        stage: &str,
        param: &str,
        work: impl FnOnce() -> Result<StageRecord>,
    ) -> Result<StageRecord> {
        let key = Store::key(&(&self.cfg, self.segmenter.name()), stage, param)?;
        let record = match self.store.get::<StageRecord>(&key)? {
            Some(r) => {
                log::info!("{stage} {param}: reusing stored result");
                r
            }
            None => {
                let r = work()?;
                self.store.put(&key, &r)?;
                r
            }
        };
        self.tags
            .lock()
            .expect("tag lock")
            .extend(record.provenance.iter().cloned());
        Ok(record)
    }

    /// Train on one dataset's corrupted targets and evaluate on its test split.
    fn single_point(&self, stage: &str, model: &str, missing: f64, k_max: u32) -> Result<ModelResult> {
        let ds = &self.datasets[0];
        let record = self.staged(stage, model, || {
            let t = self.corrupt(ds, missing, k_max)?;
            let trained = self.fit(model, &[(ds, &t)], self.seed("train", &format!("{stage}/{model}")))?;
            let images = self.evaluate_on(model, &trained, ds)?;
            let mut provenance = self.tag_targets(model, ds, &t);
            provenance.extend(self.tag_references(model, ds));
            Ok(StageRecord {
                model: self.model_result(model, missing, k_max, &trained, images)?,
                provenance,
                bootstrap: None,
            })
        })?;
        log::info!("{model}: mean test DSC {:.4}", mean_dsc(&record.model.images));
        Ok(record.model)
    }

    fn empty_result(&self, kind: ExperimentKind, models: Vec<ModelResult>) -> ExperimentResult {
        ExperimentResult {
            experiment: kind,
            segmenter: self.segmenter.name().to_string(),
            models,
            transfer: Vec::new(),
            bootstrap: Vec::new(),
            converged_at: None,
            provenance: Vec::new(),
        }
    }

    fn corruption_sweep(&self) -> Result<ExperimentResult> {
        let models = self
            .cfg
            .missing_fractions
            .iter()
            .map(|&p| self.single_point("sweep_mc", &format!("mc_{}", pct(p)), p, 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.empty_result(ExperimentKind::CorruptionSweep, models))
    }

    fn underover_sweep(&self) -> Result<ExperimentResult> {
        let p = self.cfg.underover_missing;
        let mut models = vec![self.single_point("sweep_uo", "uo_base", p, 0)?];
        for &k in &self.cfg.k_max_values {
            models.push(self.single_point("sweep_uo", &format!("uo_k{k}"), p, k)?);
        }
        Ok(self.empty_result(ExperimentKind::UnderOverSweep, models))
    }

    fn transfer(&self) -> Result<ExperimentResult> {
        let [a, b] = match self.datasets.as_slice() {
            [a, b] => [a, b],
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "transfer needs exactly two datasets, got {}",
                    self.datasets.len()
                )))
            }
        };
        if a.channels != b.channels {
            return Err(Error::ChannelMismatch {
                expected: a.channels,
                actual: b.channels,
            });
        }
        let mut models = Vec::new();
        let mut rows = Vec::new();
        for &p in &self.cfg.transfer_fractions {
            let single_name = format!("single_{}", pct(p));
            let multi_name = format!("multi_{}", pct(p));
            let single = self.staged("transfer", &single_name, || {
                let ta = self.corrupt(a, p, 0)?;
                let trained = self.fit(&single_name, &[(a, &ta)], self.seed("train", &single_name))?;
                let images = self.evaluate_on(&single_name, &trained, b)?;
                let mut provenance = self.tag_targets(&single_name, a, &ta);
                provenance.extend(self.tag_references(&single_name, b));
                Ok(StageRecord {
                    model: self.model_result(&single_name, p, 0, &trained, images)?,
                    provenance,
                    bootstrap: None,
                })
            })?;
            let multi = self.staged("transfer", &multi_name, || {
                let ta = self.corrupt(a, p, 0)?;
                let tb = self.corrupt(b, p, 0)?;
                let trained = self.fit(&multi_name, &[(a, &ta), (b, &tb)], self.seed("train", &multi_name))?;
                let images = self.evaluate_on(&multi_name, &trained, b)?;
                let mut provenance = self.tag_targets(&multi_name, a, &ta);
                provenance.extend(self.tag_targets(&multi_name, b, &tb));
                provenance.extend(self.tag_references(&multi_name, b));
                Ok(StageRecord {
                    model: self.model_result(&multi_name, p, 0, &trained, images)?,
                    provenance,
                    bootstrap: None,
                })
            })?;
            let (s, m) = (single.model.aggregate.values(), multi.model.aggregate.values());
            for (k, name) in MetricsReport::NAMES.iter().enumerate() {
                rows.push(TransferRow {
                    missing_fraction: p,
                    delta: TransferDelta::new(*name, s[k], m[k]),
                });
            }
            models.push(single.model);
            models.push(multi.model);
        }
        let mut result = self.empty_result(ExperimentKind::Transfer, models);
        result.transfer = rows;
        Ok(result)
    }

    fn bootstrap(&self) -> Result<ExperimentResult> {
        let ds = &self.datasets[0];
        let bc = &self.cfg.bootstrap;
        let base = self.corrupt(ds, bc.missing_fraction, 0)?;
        let pristine_train = ds.pristine(SplitName::Train);
        let mut targets = base.clone();
        let mut previous: Option<Vec<BinaryMask>> = None;
        let mut models = Vec::new();
        let mut rows = Vec::new();

        for it in 0..=bc.iterations {
            let model = format!("boot_it{it:02}");
            let key = Store::key(&(&self.cfg, self.segmenter.name()), "bootstrap", &model)?;
            let next_dir = self.store.root().join(&key).join("next_targets");
            let last = it == bc.iterations;
            let record = self.staged("bootstrap", &model, || {
                let trained = self.fit(&model, &[(ds, &targets)], self.seed("train", &format!("bootstrap/{model}")))?;
                let images = self.evaluate_on(&model, &trained, ds)?;
                let mut result = self.model_result(&model, bc.missing_fraction, 0, &trained, images)?;
                result.iteration = Some(it);
                let target_reports = targets
                    .train
                    .iter()
                    .zip(&pristine_train)
                    .map(|(t, g)| evaluate(t, g))
                    .collect::<Result<Vec<_>>>()?;
                let row = BootstrapRow {
                    iteration: it,
                    test_dsc: mean_dsc(&result.images),
                    changed_pixels: previous.as_ref().map_or(0, |p| differing(p, &targets.train)),
                    target_dsc: aggregate(&target_reports, crate::metrics::Aggregation::Pooled)?.dsc,
                };
                if !last {
                    let preds = self.predict_masks(&model, &trained, ds, &ds.train, "train")?;
                    fs::create_dir_all(&next_dir).map_err(|e| Error::io(&next_dir, e))?;
                    for (k, (p, b)) in preds.iter().zip(&base.train).enumerate() {
                        let next = match bc.merge {
                            MergeMode::Replace => p.clone(),
                            MergeMode::Union => union(p, b),
                        };
                        save_tensor_file(next_dir.join(format!("{k:05}.sgt")), &next)?;
                    }
                }
                let mut provenance = self.tag_targets(&model, ds, &targets);
                provenance.extend(self.tag_references(&model, ds));
                Ok(StageRecord {
                    model: result,
                    provenance,
                    bootstrap: Some(row),
                })
            })?;
            let row = record
                .bootstrap
                .ok_or_else(|| Error::InvalidConfig(format!("stored {model} lacks a bootstrap row")))?;
            log::info!("{model}: test DSC {:.4}, {} target pixels changed", row.test_dsc, row.changed_pixels);
            rows.push(row);
            models.push(record.model);
            if !last {
                let next = (0..ds.train.len())
                    .map(|k| Tensor::read(next_dir.join(format!("{k:05}.sgt")))?.into_binary_mask())
                    .collect::<Result<Vec<_>>>()?;
                previous = Some(std::mem::replace(&mut targets.train, next));
                targets.train_provenance = Provenance::Bootstrap { iteration: it + 1 };
            }
        }
        let converged_at = (1..rows.len().saturating_sub(1))
            .find(|&i| rows[i + 1..].iter().all(|r| r.changed_pixels == 0));
        let mut result = self.empty_result(ExperimentKind::Bootstrap, models);
        result.bootstrap = rows;
        result.converged_at = converged_at;
        Ok(result)
    }
}

/// Load, prepare and run one experiment family, writing results under `out`.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: ExperimentConfig,
    out: impl AsRef<Path>,
) -> Result<ExperimentResult> {
    Runner::new(cfg, out.as_ref())?.run(kind)
}

pub const CSV_HEADER: [&str; 16] = [
    "experiment", "model", "missing_fraction", "k_max", "iteration", "dataset", "image", "DSC",
    "Jaccard", "Precision", "Recall", "Specificity", "tp", "fp", "fn", "tn",
];

/// `<kind>.csv` (model × image), `<kind>_summary.json`, and for transfer and
/// bootstrap a `<kind>_delta.csv` / `<kind>_trajectory.csv`.
pub fn write_results(out: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let name = result.experiment.as_str();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for m in &result.models {
        for r in &m.images {
            let c = r.metrics.counts;
            let mut rec = vec![
                name.to_string(),
                m.model.clone(),
                m.missing_fraction.to_string(),
                m.k_max.to_string(),
                m.iteration.map_or(String::new(), |i| i.to_string()),
                r.dataset.clone(),
                r.image.clone(),
            ];
            rec.extend(r.metrics.values().iter().map(|v| v.to_string()));
            rec.extend([c.tp, c.fp, c.fn_, c.tn].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(out, e.into_error()))?;
    write_atomic(&out.join(format!("{name}.csv")), &bytes)?;
    write_atomic(
        &out.join(format!("{name}_summary.json")),
        &serde_json::to_vec_pretty(result)?,
    )?;
    if !result.transfer.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["missing_fraction", "metric", "single", "multi", "delta"])?;
        for r in &result.transfer {
            w.write_record([
                r.missing_fraction.to_string(),
                r.delta.metric_name.clone(),
                r.delta.m_single_tissue.to_string(),
                r.delta.m_multi_tissue.to_string(),
                r.delta.delta.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(out, e.into_error()))?;
        write_atomic(&out.join(format!("{name}_delta.csv")), &bytes)?;
    }
    if !result.bootstrap.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "test_dsc", "changed_pixels", "target_dsc"])?;
        for r in &result.bootstrap {
            w.write_record([
                r.iteration.to_string(),
                r.test_dsc.to_string(),
                r.changed_pixels.to_string(),
                r.target_dsc.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(out, e.into_error()))?;
        write_atomic(&out.join(format!("{name}_trajectory.csv")), &bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_labels() {
        assert_eq!(pct(0.0), "0");
        assert_eq!(pct(0.01), "1");
        assert_eq!(pct(0.07), "7");
        assert_eq!(pct(0.125), "12.5");
        assert_eq!(pct(0.95), "95");
    }

    #[test]
    fn union_and_difference() {
        let a = BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let b = BinaryMask::new(2, 2, vec![0, 0, 1, 0]).unwrap();
        assert_eq!(union(&a, &b).bits(), &[1, 0, 1, 0]);
        assert_eq!(differing(std::slice::from_ref(&a), &[b]), 2);
        assert_eq!(differing(std::slice::from_ref(&a), std::slice::from_ref(&a)), 0);
    }

    #[test]
    fn auto_relabel_only_for_binary_masks() {
        let binary = InstanceMask::new(2, 1, vec![1, 1]).unwrap();
        let labelled = InstanceMask::new(2, 1, vec![1, 2]).unwrap();
        assert!(needs_relabel(RelabelMode::Auto, &binary));
        assert!(!needs_relabel(RelabelMode::Auto, &labelled));
        assert!(needs_relabel(RelabelMode::Always, &labelled));
        assert!(!needs_relabel(RelabelMode::Never, &binary));
    }
}
