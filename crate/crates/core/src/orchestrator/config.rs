use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corruption::{Connectivity, ResegmentPolicy};
use crate::error::{Error, Result};
use crate::metrics::Aggregation;
use crate::patchgrid::DEFAULT_PATCH;
use crate::segmenter::TrainConfig;
use crate::types::KERNEL_POOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub manifest: PathBuf,
    /// Ordered channel names; all channels when absent.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    #[default]
    Builtin,
    Command,
    Oracle,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    /// Program and leading arguments; `train|predict --manifest <path>` is appended.
    pub command: Vec<String>,
    pub timeout_secs: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Builtin,
            command: Vec::new(),
            timeout_secs: 3600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Targets become the thresholded predictions.
    #[default]
    Replace,
    /// Predictions OR the iteration-0 corrupted targets.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub missing_fraction: f64,
    pub iterations: usize,
    pub merge: MergeMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            missing_fraction: 0.95,
            iterations: 10,
            merge: MergeMode::Replace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.70, 0.10, 0.20],
            stratified: true,
        }
    }
}

/// When to recompute instance labels from the binarized ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelabelMode {
    /// Only for masks whose labels are all 0/1.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetRef>,
    pub missing_fractions: Vec<f64>,
    pub k_max_values: Vec<u32>,
    pub underover_missing: f64,
    pub resegment_policy: ResegmentPolicy,
    pub transfer_fractions: Vec<f64>,
    pub bootstrap: BootstrapConfig,
    pub segmenter: SegmenterConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub patch_size: usize,
    pub normalize_percentile: f64,
    pub corrupt_validation: bool,
    pub relabel: RelabelMode,
    pub connectivity: u8,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            missing_fractions: vec![
                0.0, 0.01, 0.02, 0.05, 0.10, 0.20, 0.25, 0.50, 0.75, 0.80, 0.85, 0.90, 0.95,
            ],
            k_max_values: vec![3, 5, 7, 9],
            underover_missing: 0.5,
            resegment_policy: ResegmentPolicy::Random,
            transfer_fractions: vec![0.0, 0.10, 0.50, 0.90],
            bootstrap: BootstrapConfig::default(),
            segmenter: SegmenterConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            patch_size: DEFAULT_PATCH,
            normalize_percentile: 99.0,
            corrupt_validation: true,
            relabel: RelabelMode::Auto,
            connectivity: 8,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

fn check_fraction(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} {p} outside [0, 1]")))
    }
}

impl ExperimentConfig {
    /// Parse a config file; relative dataset paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.manifest.is_relative() {
                d.manifest = base.join(&d.manifest);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidConfig("no datasets configured".into()));
        }
        for &p in &self.missing_fractions {
            check_fraction("missing fraction", p)?;
        }
        for &p in &self.transfer_fractions {
            check_fraction("transfer fraction", p)?;
        }
        check_fraction("underover_missing", self.underover_missing)?;
        check_fraction("bootstrap missing_fraction", self.bootstrap.missing_fraction)?;
        for &k in &self.k_max_values {
            if !KERNEL_POOL.contains(&k) {
                return Err(Error::InvalidKMax(k));
            }
        }
        if self.bootstrap.iterations == 0 {
            return Err(Error::InvalidConfig("bootstrap iterations must be >= 1".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch_size must be >= 1".into()));
        }
        if !(self.normalize_percentile > 0.0 && self.normalize_percentile <= 100.0) {
            return Err(Error::InvalidConfig("normalize_percentile must be in (0, 100]".into()));
        }
        if self.connectivity_mode().is_none() {
            return Err(Error::InvalidConfig(format!(
                "connectivity {} is not 4 or 8",
                self.connectivity
            )));
        }
        if self.segmenter.kind == SegmenterKind::Command && self.segmenter.command.is_empty() {
            return Err(Error::InvalidConfig("command segmenter without a command".into()));
        }
        self.train.validate()
    }

    pub fn connectivity_mode(&self) -> Option<Connectivity> {
        Connectivity::from_neighbours(self.connectivity)
    }
}
