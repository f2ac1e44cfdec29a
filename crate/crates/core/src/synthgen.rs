//! Synthetic six-channel cytometry-like images with exact instance masks.
//!
//! Channel roles follow the lung panel: `Histone H3` and the first
//! `Vimentin` fill cell bodies, `Collagen Type I` and the second `Vimentin`
//! carry stromal background texture, `DNA1`/`DNA2` peak at cell centres.
//! Cells are ellipses that never touch (at least one background pixel
//! between any two), so 8-connected labelling recovers them exactly.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AcquisitionEntry, DatasetManifest};
use crate::rng::{derive_seed, CounterRng};
use crate::tensor::save_tensor_file;
use crate::types::{InstanceMask, MultiChannelImage};

pub const CHANNEL_NAMES: [&str; 6] = [
    "Histone H3",
    "Vimentin",
    "Collagen Type I",
    "Vimentin",
    "DNA1",
    "DNA2",
];

const CYTO: [usize; 2] = [0, 1];
const STROMA: [usize; 2] = [2, 3];
const NUCLEAR: [usize; 2] = [4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub n_cells: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Mean foreground intensity of the cell channels.
    pub contrast: f32,
    /// Per-cell brightness is drawn from `[1 - spread, 1 + spread]`.
    pub brightness_spread: f32,
    /// Level added to every channel everywhere.
    pub background: f32,
    /// Peak of the stromal texture.
    pub stroma_level: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            n_cells: 40,
            radius_min: 3.0,
            radius_max: 7.0,
            contrast: 10.0,
            brightness_spread: 0.5,
            background: 1.0,
            stroma_level: 6.0,
            noise_sigma: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("zero-area image".into()));
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return Err(Error::InvalidConfig(format!(
                "radius bounds [{}, {}] invalid",
                self.radius_min, self.radius_max
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.contrast >= 0.0) || !(self.background >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_sigma, contrast and background must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.brightness_spread) {
            return Err(Error::InvalidConfig("brightness_spread must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: MultiChannelImage,
    pub mask: InstanceMask,
    pub n_placed: usize,
}

struct Cell {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    brightness: f32,
}

impl Cell {
    /// Normalised squared radius of pixel centre `(y, x)`; ≤ 1 inside.
    fn rho2(&self, y: usize, x: usize) -> f64 {
        let dy = y as f64 + 0.5 - self.cy;
        let dx = x as f64 + 0.5 - self.cx;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    fn pixels(&self, w: usize, h: usize) -> Vec<usize> {
        let r = self.a.max(self.b).ceil() as isize + 1;
        let (cy, cx) = (self.cy.floor() as isize, self.cx.floor() as isize);
        let mut out = Vec::new();
        for y in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                if self.rho2(y as usize, x as usize) <= 1.0 {
                    out.push(y as usize * w + x as usize);
                }
            }
        }
        out
    }
}

/// Smooth background field in `[0, 1]` from a few random plane waves.
fn texture(w: usize, h: usize, rng: &mut CounterRng) -> Vec<f32> {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle = rng.next_f64() * 2.0 * PI;
            let freq = 0.05 + 0.15 * rng.next_f64();
            (freq * angle.cos(), freq * angle.sin(), rng.next_f64() * 2.0 * PI)
        })
        .collect();
    (0..w * h)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let s: f64 = waves.iter().map(|(fx, fy, ph)| (fx * x + fy * y + ph).sin()).sum();
            (0.5 + s / (2.0 * waves.len() as f64)) as f32
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthSample> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = CounterRng::new(config.seed, 0x5359_4e54);
    let mut labels = vec![0u32; w * h];
    let mut cells: Vec<Cell> = Vec::new();
    let max_attempts = 100 * config.n_cells;
    let mut attempts = 0;

    while cells.len() < config.n_cells && attempts < max_attempts {
        attempts += 1;
        let span = config.radius_max - config.radius_min;
        let a = config.radius_min + span * rng.next_f64();
        let b = config.radius_min + span * rng.next_f64();
        let theta = rng.next_f64() * PI;
        let cell = Cell {
            cy: rng.next_f64() * h as f64,
            cx: rng.next_f64() * w as f64,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
            brightness: 1.0 + config.brightness_spread * (2.0 * rng.next_f64() as f32 - 1.0),
        };
        let px = cell.pixels(w, h);
        if px.is_empty() {
            continue;
        }
        let clear = px.iter().all(|&i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (ny, nx) = (y + dy, x + dx);
                    ny < 0
                        || nx < 0
                        || ny >= h as isize
                        || nx >= w as isize
                        || labels[ny as usize * w + nx as usize] == 0
                })
            })
        });
        if !clear {
            continue;
        }
        let id = cells.len() as u32 + 1;
        for &i in &px {
            labels[i] = id;
        }
        cells.push(cell);
    }
    if cells.len() < config.n_cells {
        log::info!(
            "placed {} of {} cells after {attempts} attempts",
            cells.len(),
            config.n_cells
        );
    }

    let stroma: Vec<Vec<f32>> = (0..STROMA.len()).map(|_| texture(w, h, &mut rng)).collect();
    let mut planes = vec![vec![config.background; w * h]; CHANNEL_NAMES.len()];
    for i in 0..w * h {
        let l = labels[i];
        if l == 0 {
            for (k, &ch) in STROMA.iter().enumerate() {
                planes[ch][i] += config.stroma_level * stroma[k][i];
            }
            continue;
        }
        let cell = &cells[l as usize - 1];
        let (y, x) = (i / w, i % w);
        let body = config.contrast * cell.brightness;
        let rho = cell.rho2(y, x).min(1.0) as f32;
        let nuclear = body * (1.6 - 1.2 * rho);
        for &ch in &CYTO {
            planes[ch][i] += body;
        }
        for &ch in &NUCLEAR {
            planes[ch][i] += nuclear;
        }
    }
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, config.noise_sigma).expect("sigma checked");
        for (ch, plane) in planes.iter_mut().enumerate() {
            let mut noise_rng = CounterRng::new(config.seed, 0x4e4f_4953_0000 + ch as u64);
            for v in plane.iter_mut() {
                *v = (*v + normal.sample(&mut noise_rng)).max(0.0);
            }
        }
    }
    let names = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
    let image = MultiChannelImage::from_planes(w, h, names, &planes)?;
    let n_placed = cells.len();
    Ok(SynthSample {
        image,
        mask: InstanceMask::new(w, h, labels)?,
        n_placed,
    })
}

/// Generate `n_images` samples (seed of image `i` derived from the master
/// seed) and write them with a dataset manifest under `out_dir`.
pub fn write_dataset(
    config: &SynthConfig,
    n_images: usize,
    name: &str,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries = (0..n_images)
        .into_par_iter()
        .map(|i| {
            let cfg = SynthConfig {
                seed: derive_seed(config.seed, "synth", &i.to_string()),
                ..config.clone()
            };
            let sample = generate(&cfg)?;
            let id = format!("{name}_{i:04}");
            let image = Path::new("images").join(format!("{id}.sgt"));
            let mask = Path::new("masks").join(format!("{id}.sgt"));
            save_tensor_file(out_dir.join(&image), &sample.image)?;
            save_tensor_file(out_dir.join(&mask), &sample.mask)?;
            Ok(AcquisitionEntry {
                id,
                image,
                mask,
                stratum: String::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        name: name.to_string(),
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        acquisitions: entries,
    };
    manifest.save(out_dir.join("dataset.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{relabel_components, Connectivity};
    use crate::types::Raster;

    #[test]
    fn noiseless_cells_recovered_by_midpoint_threshold() {
        let cfg = SynthConfig { noise_sigma: 0.0, contrast: 50.0, seed: 4, ..Default::default() };
        let s = generate(&cfg).unwrap();
        let sum: Vec<f32> = (0..cfg.width * cfg.height)
            .map(|i| {
                let px = &s.image.pixels()[i * 6..i * 6 + 6];
                CYTO.iter().chain(&NUCLEAR).map(|&c| px[c]).sum()
            })
            .collect();
        let fg = s.mask.binarize();
        let min_fg = sum.iter().zip(fg.bits()).filter(|(_, &b)| b == 1).map(|(v, _)| *v).fold(f32::MAX, f32::min);
        let max_bg = sum.iter().zip(fg.bits()).filter(|(_, &b)| b == 0).map(|(v, _)| *v).fold(0.0, f32::max);
        let mid = (min_fg + max_bg) / 2.0;
        assert!(min_fg > max_bg);
        for (v, &b) in sum.iter().zip(fg.bits()) {
            assert_eq!(*v >= mid, b == 1);
        }
    }

    #[test]
    fn no_cells_gives_textured_background() {
        let cfg = SynthConfig { n_cells: 0, noise_sigma: 0.0, ..Default::default() };
        let s = generate(&cfg).unwrap();
        assert_eq!(s.mask.cell_count(), 0);
        let stroma = s.image.channel(2);
        let (lo, hi) = stroma.iter().fold((f32::MAX, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi > lo);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig { seed: 77, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn cells_never_touch() {
        for seed in 0..10 {
            let cfg = SynthConfig { seed, n_cells: 80, ..Default::default() };
            let s = generate(&cfg).unwrap();
            let relabelled = relabel_components(&s.mask, Connectivity::Eight);
            assert_eq!(relabelled.cell_count(), s.n_placed);
            assert_eq!(s.mask.cell_count(), s.n_placed);
            assert!(s.image.pixels().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn crowded_request_places_fewer() {
        let cfg = SynthConfig { width: 20, height: 20, n_cells: 100, ..Default::default() };
        let s = generate(&cfg).unwrap();
        assert!(s.n_placed < 100);
        assert_eq!(s.mask.cell_count(), s.n_placed);
    }

    #[test]
    fn zero_area_rejected() {
        let cfg = SynthConfig { width: 0, ..Default::default() };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn dataset_written_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { width: 32, height: 24, n_cells: 5, ..Default::default() };
        let m = write_dataset(&cfg, 3, "toy", dir.path()).unwrap();
        assert_eq!(m.acquisitions.len(), 3);
        let ds = crate::ingest::load_dataset(dir.path().join("dataset.json")).unwrap();
        assert_eq!(ds.acquisitions.len(), 3);
        assert_eq!(ds.acquisitions[0].image.dims(), (32, 24));
        assert_eq!(ds.acquisitions[0].image.channels(), 6);
    }
}
