#![allow(dead_code)]

use std::path::{Path, PathBuf};

use segstress::orchestrator::{DatasetRef, ExperimentConfig, SegmenterKind};
use segstress::synthgen::{write_dataset, SynthConfig};

/// A small synthetic dataset under `dir/name`; returns the manifest path.
pub fn synth_dataset(dir: &Path, name: &str, n_images: usize, seed: u64) -> PathBuf {
    let cfg = SynthConfig {
        width: 48,
        height: 40,
        n_cells: 8,
        radius_min: 3.0,
        radius_max: 6.0,
        seed,
        ..Default::default()
    };
    let out = dir.join(name);
    write_dataset(&cfg, n_images, name, &out).unwrap();
    out.join("dataset.json")
}

/// Quick settings: 32-px patches, a handful of epochs, few sweep points.
pub fn small_config(manifests: &[&Path], kind: SegmenterKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        datasets: manifests
            .iter()
            .map(|m| DatasetRef { manifest: m.to_path_buf(), channels: None })
            .collect(),
        missing_fractions: vec![0.0, 0.5, 0.9],
        k_max_values: vec![3, 9],
        transfer_fractions: vec![0.0, 0.5],
        patch_size: 32,
        seed: 5,
        ..Default::default()
    };
    cfg.segmenter.kind = kind;
    cfg.bootstrap.iterations = 3;
    cfg.train.epochs = 8;
    cfg.train.learning_rate = 0.05;
    cfg.train.batch_size = 4;
    cfg
}
