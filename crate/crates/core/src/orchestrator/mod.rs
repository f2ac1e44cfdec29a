//! End-to-end experiment driver: corruption sweeps, under/over-segmentation
//! sweeps, tissue transfer and bootstrapped self-training, run against any
//! segmenter that speaks the protocol in [`protocol`].

pub mod config;
mod experiments;
pub mod protocol;
pub mod store;

pub use config::{
    BootstrapConfig, DatasetRef, ExperimentConfig, MergeMode, RelabelMode, SegmenterConfig,
    SegmenterKind, SplitConfig,
};
pub use experiments::{
    prepare_dataset, run_experiment, write_results, ArtifactTag, BootstrapRow, ExperimentKind,
    ExperimentResult, ImageResult, ModelResult, PreparedAcq, PreparedDataset, Provenance, Runner,
    SplitName, TransferRow, CSV_HEADER,
};
