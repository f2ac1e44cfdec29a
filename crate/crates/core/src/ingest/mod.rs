//! Loading acquisitions, selecting biomarker channels, percentile
//! normalisation and acquisition-level dataset splits.

mod tiff;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{string_key, CounterRng};
use crate::tensor::Tensor;
use crate::types::{InstanceMask, MultiChannelImage, Raster};

pub use self::tiff::{load_tiff, load_tiff_mask};
pub use crate::tensor::{load_tensor_file, save_tensor_file, Loaded};

/// One image with its ground-truth instance mask.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub id: String,
    pub image: MultiChannelImage,
    pub gt_mask: InstanceMask,
    pub stratum: String,
}

impl Acquisition {
    pub fn new(
        id: impl Into<String>,
        image: MultiChannelImage,
        gt_mask: InstanceMask,
        stratum: impl Into<String>,
    ) -> Result<Self> {
        if image.dims() != gt_mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: image.dims(),
                actual: gt_mask.dims(),
            });
        }
        Ok(Self {
            id: id.into(),
            image,
            gt_mask,
            stratum: stratum.into(),
        })
    }
}

/// Ordered channel selection per dataset name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelConfig(pub BTreeMap<String, Vec<String>>);

impl ChannelConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn channels_for(&self, dataset: &str) -> Option<&[String]> {
        self.0.get(dataset).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub stratum: String,
}

/// On-disk dataset description. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub channel_names: Vec<String>,
    pub acquisitions: Vec<AcquisitionEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub acquisitions: Vec<Acquisition>,
    /// Ids dropped at load time, with the reason.
    pub rejected: Vec<(String, String)>,
}

fn is_tiff(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("tif" | "tiff")
    )
}

fn load_image_any(path: &Path) -> Result<MultiChannelImage> {
    if is_tiff(path) {
        load_tiff(path)
    } else {
        Tensor::read(path)?.into_image()
    }
}

fn load_mask_any(path: &Path) -> Result<InstanceMask> {
    if is_tiff(path) {
        load_tiff_mask(path)
    } else {
        Tensor::read(path)?.into_instance_mask()
    }
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Load every acquisition listed in a manifest.
///
/// Acquisitions whose image and mask sizes disagree are skipped with a
/// warning and listed in [`Dataset::rejected`].
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut acquisitions = Vec::with_capacity(manifest.acquisitions.len());
    let mut rejected = Vec::new();
    for entry in &manifest.acquisitions {
        let image = load_image_any(&root.join(&entry.image))?;
        if image.channels() != manifest.channel_names.len() {
            return Err(Error::InvalidImage(format!(
                "{}: {} channels but manifest names {}",
                entry.id,
                image.channels(),
                manifest.channel_names.len()
            )));
        }
        let image = image.with_channel_names(manifest.channel_names.clone())?;
        let mask = load_mask_any(&root.join(&entry.mask))?;
        match Acquisition::new(entry.id.clone(), image, mask, entry.stratum.clone()) {
            Ok(a) => acquisitions.push(a),
            Err(Error::DimensionMismatch { expected, actual }) => {
                let reason = format!("image {expected:?} vs mask {actual:?}");
                log::warn!("rejecting acquisition {}: {reason}", entry.id);
                rejected.push((entry.id.clone(), reason));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Dataset {
        name: manifest.name,
        acquisitions,
        rejected,
    })
}

/// Pick channels by name, in request order.
///
/// A name requested `k` times binds to the first `k` source channels that
/// carry it, in source order.
pub fn select_channels(image: &MultiChannelImage, names: &[String]) -> Result<MultiChannelImage> {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, n) in image.channel_names().iter().enumerate() {
        positions.entry(n.as_str()).or_default().push(i);
    }
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut picks = Vec::with_capacity(names.len());
    for name in names {
        let slots = positions
            .get(name.as_str())
            .ok_or_else(|| Error::UnknownChannel(name.clone()))?;
        let k = used.entry(name.as_str()).or_insert(0);
        let Some(&src) = slots.get(*k) else {
            return Err(Error::ChannelRepeats {
                name: name.clone(),
                requested: names.iter().filter(|n| *n == name).count(),
                available: slots.len(),
            });
        };
        *k += 1;
        picks.push(src);
    }
    let c = image.channels();
    let src = image.pixels();
    let n = image.width() * image.height();
    let mut pixels = Vec::with_capacity(n * picks.len());
    for p in 0..n {
        for &ch in &picks {
            pixels.push(src[p * c + ch]);
        }
    }
    let mut out = MultiChannelImage::new(image.width(), image.height(), names.to_vec(), pixels)?;
    out.resolution_um = image.resolution_um;
    Ok(out)
}

/// Linear-interpolated percentile at rank `(n - 1) * q / 100` of ascending values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Divide each channel by its own `q`-th percentile. Channels whose
/// percentile is zero are zeroed. No clipping, so values above the
/// percentile stay above 1.
pub fn percentile_normalize(image: &MultiChannelImage, q: f64) -> Result<MultiChannelImage> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidConfig(format!("percentile {q} outside (0, 100]")));
    }
    let c = image.channels();
    let n = image.width() * image.height();
    let mut out = image.pixels().to_vec();
    if n == 0 {
        return Ok(image.clone());
    }
    for ch in 0..c {
        let mut vals: Vec<f64> = (0..n).map(|p| out[p * c + ch] as f64).collect();
        vals.sort_by(f64::total_cmp);
        let p = percentile(&vals, q);
        for px in 0..n {
            let v = &mut out[px * c + ch];
            *v = if p > 0.0 { (*v as f64 / p) as f32 } else { 0.0 };
        }
    }
    Ok(image.like(image.width(), image.height(), out))
}

/// Acquisition ids assigned to train / validation / test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratios: [f64; 3],
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier bucket.
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| n as f64 * r);
    let mut counts = quotas.map(|q| (q + 1e-9).floor().max(0.0) as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &bucket in order.iter().take(n.saturating_sub(assigned)) {
        counts[bucket] += 1;
    }
    counts
}

/// Split by acquisition. With `stratified`, each stratum is shuffled and
/// apportioned independently (strata visited in name order).
pub fn split_dataset(
    items: &[(String, String)],
    ratios: [f64; 3],
    seed: u64,
    stratified: bool,
) -> Result<DatasetSplit> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no acquisitions to split"));
    }
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, stratum) in items {
        let key = if stratified { stratum.as_str() } else { "" };
        groups.entry(key).or_default().push(id.clone());
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        ratios,
    };
    for (stratum, mut ids) in groups {
        let mut rng = CounterRng::new(seed, string_key(stratum));
        rng.shuffle(&mut ids);
        let [a, b, _] = apportion(ids.len(), ratios);
        let mut it = ids.into_iter();
        split.train.extend(it.by_ref().take(a));
        split.val.extend(it.by_ref().take(b));
        split.test.extend(it);
    }
    Ok(split)
}
