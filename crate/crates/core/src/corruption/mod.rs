//! Simulated annotation errors: missing cells and per-cell
//! under/over-segmentation.
//!
//! Randomness comes from [`crate::rng::CounterRng`]. Erasure draws from the
//! stream `(seed, ERASE_STREAM)`; resegmentation draws from `(seed, cell_id)`,
//! first the kernel index then the erode/dilate coin.

mod label;
mod morph;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::CounterRng;
use crate::types::{CorruptionSpec, InstanceMask, Raster};

pub use label::{relabel_components, Connectivity};
pub use morph::{
    apply_actions, dilate_square, erode_square, plan_resegment, resegment_cells,
    resegment_cells_with, CellAction, ResegmentPolicy,
};

/// Stream key for missing-cell selection.
pub const ERASE_STREAM: u64 = 0x4552_4153_455f_4d43;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInfo {
    pub id: u32,
    pub size: usize,
    pub bbox: BoundingBox,
}

/// Every positive label of a mask, ascending by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CellIndex(pub Vec<CellInfo>);

impl CellIndex {
    pub fn build(mask: &InstanceMask) -> Self {
        let w = mask.width();
        let mut cells: std::collections::BTreeMap<u32, CellInfo> = Default::default();
        for (i, &l) in mask.labels().iter().enumerate() {
            if l == 0 {
                continue;
            }
            let (r, c) = (i / w, i % w);
            cells
                .entry(l)
                .and_modify(|info| {
                    info.size += 1;
                    let b = &mut info.bbox;
                    b.min_row = b.min_row.min(r);
                    b.max_row = b.max_row.max(r);
                    b.min_col = b.min_col.min(c);
                    b.max_col = b.max_col.max(c);
                })
                .or_insert(CellInfo {
                    id: l,
                    size: 1,
                    bbox: BoundingBox {
                        min_row: r,
                        min_col: c,
                        max_row: r,
                        max_col: c,
                    },
                });
        }
        CellIndex(cells.into_values().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().map(|c| c.id)
    }
}

/// `round(fraction * n)` with halves rounded away from zero.
pub fn erase_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Ids chosen for erasure: Fisher-Yates over the ascending ids, first
/// `erase_count` entries.
pub fn cells_to_erase(mask: &InstanceMask, fraction: f64, seed: u64) -> Vec<u32> {
    let mut ids = mask.cell_ids();
    let n_erase = erase_count(fraction.clamp(0.0, 1.0), ids.len());
    let mut rng = CounterRng::new(seed, ERASE_STREAM);
    rng.shuffle(&mut ids);
    ids.truncate(n_erase);
    ids.sort_unstable();
    ids
}

/// Remove a fixed fraction of cells, leaving every other cell untouched.
pub fn erase_cells(mask: &InstanceMask, fraction: f64, seed: u64) -> InstanceMask {
    let doomed = cells_to_erase(mask, fraction, seed);
    if doomed.is_empty() {
        return mask.clone();
    }
    let labels = mask
        .labels()
        .iter()
        .map(|&l| if doomed.binary_search(&l).is_ok() { 0 } else { l })
        .collect();
    mask.like(mask.width(), mask.height(), labels)
}

/// Erase then resegment, the order used for the under/over-segmentation
/// experiments.
pub fn corrupt(mask: &InstanceMask, spec: &CorruptionSpec) -> Result<InstanceMask> {
    let erased = erase_cells(mask, spec.missing_fraction, spec.seed);
    resegment_cells(&erased, spec.k_max, spec.seed)
}
