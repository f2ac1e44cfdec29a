use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CellIndex, CellInfo};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::types::{InstanceMask, Raster, KERNEL_POOL};

/// What happens to one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellAction {
    Keep,
    Erode(u32),
    Dilate(u32),
}

/// How the erode/dilate choice is made. Kernel sizes are always drawn
/// from the pool; the forced variants only override the coin flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResegmentPolicy {
    #[default]
    Random,
    ForceErode,
    ForceDilate,
}

fn kernel_pool(k_max: u32) -> Result<Vec<u32>> {
    if !KERNEL_POOL.contains(&k_max) {
        return Err(Error::InvalidKMax(k_max));
    }
    Ok(KERNEL_POOL.iter().copied().filter(|&k| k <= k_max).collect())
}

/// Per-cell draws for every cell in `mask`.
pub fn plan_resegment(
    mask: &InstanceMask,
    k_max: u32,
    seed: u64,
    policy: ResegmentPolicy,
) -> Result<BTreeMap<u32, CellAction>> {
    let pool = kernel_pool(k_max)?;
    Ok(mask
        .cell_ids()
        .into_iter()
        .map(|id| {
            let mut rng = CounterRng::new(seed, id as u64);
            let k = pool[rng.below(pool.len() as u64) as usize];
            let erode = rng.below(2) == 0;
            let action = match (k, policy) {
                (0, _) => CellAction::Keep,
                (k, ResegmentPolicy::ForceErode) => CellAction::Erode(k),
                (k, ResegmentPolicy::ForceDilate) => CellAction::Dilate(k),
                (k, ResegmentPolicy::Random) if erode => CellAction::Erode(k),
                (k, ResegmentPolicy::Random) => CellAction::Dilate(k),
            };
            (id, action)
        })
        .collect())
}

/// Randomly erode or dilate every cell with a kernel from `{k ∈ K : k ≤ k_max}`.
pub fn resegment_cells(mask: &InstanceMask, k_max: u32, seed: u64) -> Result<InstanceMask> {
    resegment_cells_with(mask, k_max, seed, ResegmentPolicy::Random)
}

pub fn resegment_cells_with(
    mask: &InstanceMask,
    k_max: u32,
    seed: u64,
    policy: ResegmentPolicy,
) -> Result<InstanceMask> {
    let plan = plan_resegment(mask, k_max, seed, policy)?;
    Ok(apply_actions(mask, &plan))
}

/// Running-window pass along one axis. `all` selects erosion (every
/// sample in the window set, out-of-range counts as unset) versus dilation.
fn window_pass(src: &[bool], w: usize, h: usize, r: usize, horizontal: bool, all: bool) -> Vec<bool> {
    let (len, lines) = if horizontal { (w, h) } else { (h, w) };
    let idx = |line: usize, pos: usize| if horizontal { line * w + pos } else { pos * w + line };
    let mut out = vec![false; w * h];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for pos in 0..len {
            prefix[pos + 1] = prefix[pos] + usize::from(src[idx(line, pos)]);
        }
        for pos in 0..len {
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(len - 1);
            let count = prefix[hi + 1] - prefix[lo];
            out[idx(line, pos)] = if all {
                pos >= r && pos + r < len && count == 2 * r + 1
            } else {
                count > 0
            };
        }
    }
    out
}

/// Erosion by a `k`×`k` square centred on each pixel; pixels outside the
/// raster count as background.
pub fn erode_square(bits: &[bool], w: usize, h: usize, k: u32) -> Vec<bool> {
    let r = (k as usize).saturating_sub(1) / 2;
    if r == 0 {
        return bits.to_vec();
    }
    let tmp = window_pass(bits, w, h, r, true, true);
    window_pass(&tmp, w, h, r, false, true)
}

/// Dilation by a `k`×`k` square, clipped to the raster.
pub fn dilate_square(bits: &[bool], w: usize, h: usize, k: u32) -> Vec<bool> {
    let r = (k as usize).saturating_sub(1) / 2;
    if r == 0 {
        return bits.to_vec();
    }
    let tmp = window_pass(bits, w, h, r, true, false);
    window_pass(&tmp, w, h, r, false, false)
}

/// New pixel set (global indices) of one cell after its action.
fn transformed_pixels(mask: &InstanceMask, cell: &CellInfo, action: CellAction) -> Vec<usize> {
    let (w, h) = mask.dims();
    let k = match action {
        CellAction::Keep => 0,
        CellAction::Erode(k) | CellAction::Dilate(k) => k,
    };
    let r = (k as usize).saturating_sub(1) / 2;
    let grow = matches!(action, CellAction::Dilate(_));
    let b = cell.bbox;
    let (r0, c0) = if grow {
        (b.min_row.saturating_sub(r), b.min_col.saturating_sub(r))
    } else {
        (b.min_row, b.min_col)
    };
    let (r1, c1) = if grow {
        ((b.max_row + r).min(h - 1), (b.max_col + r).min(w - 1))
    } else {
        (b.max_row, b.max_col)
    };
    let (lw, lh) = (c1 - c0 + 1, r1 - r0 + 1);
    let mut local = vec![false; lw * lh];
    for y in 0..lh {
        for x in 0..lw {
            local[y * lw + x] = mask.get(r0 + y, c0 + x) == cell.id;
        }
    }
    let result = match action {
        CellAction::Keep => local,
        CellAction::Erode(k) => erode_square(&local, lw, lh, k),
        CellAction::Dilate(k) => dilate_square(&local, lw, lh, k),
    };
    result
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(i, _)| (r0 + i / lw) * w + c0 + i % lw)
        .collect()
}

/// Apply per-cell actions.
///
/// Eroded cells lose pixels (possibly all of them). Dilated cells may only
/// claim pixels that are background in the input; a pixel claimed by
/// several cells goes to the lowest id. Cells absent from `actions` are
/// kept as they are.
pub fn apply_actions(mask: &InstanceMask, actions: &BTreeMap<u32, CellAction>) -> InstanceMask {
    let index = CellIndex::build(mask);
    let changed: Vec<(CellInfo, CellAction, Vec<usize>)> = index
        .0
        .par_iter()
        .filter_map(|cell| {
            let action = actions.get(&cell.id).copied().unwrap_or(CellAction::Keep);
            (action != CellAction::Keep)
                .then(|| (*cell, action, transformed_pixels(mask, cell, action)))
        })
        .collect();

    let src = mask.labels();
    let mut out = src.to_vec();
    let w = mask.width();
    for (cell, action, pixels) in &changed {
        if let CellAction::Erode(_) = action {
            let b = cell.bbox;
            for y in b.min_row..=b.max_row {
                for x in b.min_col..=b.max_col {
                    let i = y * w + x;
                    if src[i] == cell.id {
                        out[i] = 0;
                    }
                }
            }
            for &i in pixels {
                out[i] = cell.id;
            }
        }
    }
    // ascending id order, so the first claim on a pixel is the lowest id
    for (cell, action, pixels) in &changed {
        if let CellAction::Dilate(_) = action {
            for &i in pixels {
                if src[i] == 0 && out[i] == 0 {
                    out[i] = cell.id;
                }
            }
        }
    }
    mask.like(mask.width(), mask.height(), out)
}
