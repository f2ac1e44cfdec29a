//! Domain rasters and result records shared by every stage of the workbench.
//!
//! All rasters store samples row-major. Multi-channel images interleave
//! channels per pixel (`(row * width + col) * channels + channel`), which is
//! also the on-disk order of tensor files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel sizes available to the under/over-segmentation corruption.
pub const KERNEL_POOL: [u32; 5] = [0, 3, 5, 7, 9];

/// A row-major raster with `depth` samples per pixel.
///
/// Implemented by every image and mask type so tiling and tensor I/O can be
/// written once.
pub trait Raster: Sized {
    type Sample: Copy + Default + PartialEq + std::fmt::Debug;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn depth(&self) -> usize;
    fn samples(&self) -> &[Self::Sample];

    /// Build a raster of the same kind (and metadata) with new geometry.
    fn like(&self, width: usize, height: usize, samples: Vec<Self::Sample>) -> Self;

    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelImage {
    width: usize,
    height: usize,
    channel_names: Vec<String>,
    pixels: Vec<f32>,
    pub resolution_um: f64,
}

impl MultiChannelImage {
    pub fn new(
        width: usize,
        height: usize,
        channel_names: Vec<String>,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let channels = channel_names.len();
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidImage("dimensions overflow".into()))?;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height}x{channels} needs {expected} samples, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidImage(format!(
                "sample {i} is {} (intensities must be finite and >= 0)",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            channel_names,
            pixels,
            resolution_um: 1.0,
        })
    }

    /// Image with generated channel names `ch0..chN`.
    pub fn unnamed(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        let names = (0..channels).map(|c| format!("ch{c}")).collect();
        Self::new(width, height, names, pixels)
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels() + channel]
    }

    /// Copy of one channel plane.
    pub fn channel(&self, channel: usize) -> Vec<f32> {
        let c = self.channels();
        self.pixels.iter().skip(channel).step_by(c).copied().collect()
    }

    /// Assemble an image from per-channel planes of equal size.
    pub fn from_planes(
        width: usize,
        height: usize,
        channel_names: Vec<String>,
        planes: &[Vec<f32>],
    ) -> Result<Self> {
        if planes.len() != channel_names.len() {
            return Err(Error::InvalidImage(format!(
                "{} planes for {} channel names",
                planes.len(),
                channel_names.len()
            )));
        }
        let n = width * height;
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::InvalidImage(format!(
                "plane has {} samples, expected {n}",
                p.len()
            )));
        }
        let c = planes.len();
        let mut pixels = vec![0.0f32; n * c];
        for (ci, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                pixels[i * c + ci] = *v;
            }
        }
        Self::new(width, height, channel_names, pixels)
    }

    /// Same pixels, different channel labels.
    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.channel_names.len() {
            return Err(Error::InvalidImage(format!(
                "{} names for {} channels",
                names.len(),
                self.channel_names.len()
            )));
        }
        self.channel_names = names;
        Ok(self)
    }
}

impl Raster for MultiChannelImage {
    type Sample = f32;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        self.channels()
    }
    fn samples(&self) -> &[f32] {
        &self.pixels
    }
    fn like(&self, width: usize, height: usize, samples: Vec<f32>) -> Self {
        debug_assert_eq!(samples.len(), width * height * self.channels());
        Self {
            width,
            height,
            channel_names: self.channel_names.clone(),
            pixels: samples,
            resolution_um: self.resolution_um,
        }
    }
}

/// Per-pixel cell identity; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} mask needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Distinct positive labels, ascending.
    pub fn cell_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn cell_count(&self) -> usize {
        self.cell_ids().len()
    }

    pub fn binarize(&self) -> BinaryMask {
        binarize(self)
    }
}

impl Raster for InstanceMask {
    type Sample = u32;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        1
    }
    fn samples(&self) -> &[u32] {
        &self.labels
    }
    fn like(&self, width: usize, height: usize, samples: Vec<u32>) -> Self {
        Self {
            width,
            height,
            labels: samples,
        }
    }
}

/// Foreground bits, one `u8` (0 or 1) per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    /// Any non-zero input byte is stored as 1.
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] != 0
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Each foreground pixel labelled 1; used to feed a binary mask through
    /// instance-mask APIs.
    pub fn to_instance(&self) -> InstanceMask {
        InstanceMask {
            width: self.width,
            height: self.height,
            labels: self.bits.iter().map(|&b| u32::from(b)).collect(),
        }
    }

    /// Reinterpret bits as probabilities 0.0 / 1.0.
    pub fn to_probability(&self) -> ProbabilityMask {
        ProbabilityMask {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| f32::from(b)).collect(),
        }
    }
}

impl Raster for BinaryMask {
    type Sample = u8;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        1
    }
    fn samples(&self) -> &[u8] {
        &self.bits
    }
    fn like(&self, width: usize, height: usize, samples: Vec<u8>) -> Self {
        Self {
            width,
            height,
            bits: samples,
        }
    }
}

/// Foreground probability per pixel, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "probability {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

impl Raster for ProbabilityMask {
    type Sample = f32;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        1
    }
    fn samples(&self) -> &[f32] {
        &self.values
    }
    fn like(&self, width: usize, height: usize, samples: Vec<f32>) -> Self {
        Self {
            width,
            height,
            values: samples,
        }
    }
}

pub fn binarize(mask: &InstanceMask) -> BinaryMask {
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits: mask.labels.iter().map(|&l| u8::from(l > 0)).collect(),
    }
}

/// Fully determines one corruption of a ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub missing_fraction: f64,
    pub k_max: u32,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(missing_fraction: f64, k_max: u32, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&missing_fraction) {
            return Err(Error::InvalidConfig(format!(
                "missing fraction {missing_fraction} outside [0, 1]"
            )));
        }
        if !KERNEL_POOL.contains(&k_max) {
            return Err(Error::InvalidKMax(k_max));
        }
        Ok(Self {
            missing_fraction,
            k_max,
            seed,
        })
    }
}

/// Pixel-wise confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: Confusion,
    pub dsc: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 5] = ["DSC", "Jaccard", "Precision", "Recall", "Specificity"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.dsc,
            self.jaccard,
            self.precision,
            self.recall,
            self.specificity,
        ]
    }
}

/// Single-tissue minus multi-tissue difference for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferDelta {
    pub metric_name: String,
    pub m_single_tissue: f64,
    pub m_multi_tissue: f64,
    pub delta: f64,
}

impl TransferDelta {
    pub fn new(metric_name: impl Into<String>, single: f64, multi: f64) -> Self {
        Self {
            metric_name: metric_name.into(),
            m_single_tissue: single,
            m_multi_tissue: multi,
            delta: single - multi,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_all_zero() {
        let m = InstanceMask::empty(3, 2);
        assert_eq!(m.binarize().count_ones(), 0);
    }

    #[test]
    fn binarize_marks_positive_labels() {
        let m = InstanceMask::new(3, 2, vec![0, 5, 9, 0, 9, 0]).unwrap();
        assert_eq!(m.binarize().bits(), &[0, 1, 1, 0, 1, 0]);
    }

    #[test]
    fn binarize_idempotent() {
        let m = InstanceMask::new(3, 2, vec![0, 5, 9, 0, 9, 0]).unwrap();
        let once = m.binarize();
        assert_eq!(once.to_instance().binarize(), once);
    }

    #[test]
    fn binarize_monotone_when_adding_cells() {
        let mut m = InstanceMask::new(3, 1, vec![0, 2, 0]).unwrap();
        let before = m.binarize();
        m.labels_mut()[0] = 7;
        let after = m.binarize();
        for (a, b) in before.bits().iter().zip(after.bits()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn image_rejects_negative_and_nan() {
        assert!(MultiChannelImage::unnamed(1, 1, 1, vec![-1.0]).is_err());
        assert!(MultiChannelImage::unnamed(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(MultiChannelImage::unnamed(2, 1, 1, vec![1.0]).is_err());
    }

    #[test]
    fn duplicate_channel_names_allowed() {
        let names = vec!["Vimentin".to_string(), "Vimentin".to_string()];
        let img = MultiChannelImage::new(1, 1, names, vec![1.0, 2.0]).unwrap();
        assert_eq!(img.channels(), 2);
    }

    #[test]
    fn corruption_spec_validates() {
        assert!(CorruptionSpec::new(0.5, 5, 1).is_ok());
        assert!(matches!(
            CorruptionSpec::new(0.5, 4, 1),
            Err(Error::InvalidKMax(4))
        ));
        assert!(CorruptionSpec::new(1.5, 3, 1).is_err());
    }

    #[test]
    fn transfer_delta_is_exact_difference() {
        let d = TransferDelta::new("DSC", 0.8, 0.83);
        assert_eq!(d.delta, 0.8 - 0.83);
    }
}
