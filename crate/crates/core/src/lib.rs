//! Label-noise stress testing for multiplexed-imaging cell segmentation.

pub mod corruption;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod patchgrid;
pub mod report;
pub mod rng;
pub mod segmenter;
pub mod synthgen;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
