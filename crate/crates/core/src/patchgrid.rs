//! Non-overlapping square tiling with right/bottom zero padding.
//!
//! Patches are always listed row-major; that order is the canonical order
//! used in segmenter manifests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Raster;

pub const DEFAULT_PATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub orig_w: usize,
    pub orig_h: usize,
    pub patch: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn plan_grid(w: usize, h: usize, patch: usize) -> PatchGrid {
    assert!(w >= 1 && h >= 1 && patch >= 1, "grid dimensions must be positive");
    let rows = h.div_ceil(patch);
    let cols = w.div_ceil(patch);
    PatchGrid {
        orig_w: w,
        orig_h: h,
        patch,
        pad_right: cols * patch - w,
        pad_bottom: rows * patch - h,
        rows,
        cols,
    }
}

pub fn extract_patches<R: Raster>(x: &R, grid: &PatchGrid) -> Result<Vec<R>> {
    if x.dims() != (grid.orig_w, grid.orig_h) {
        return Err(Error::DimensionMismatch {
            expected: (grid.orig_w, grid.orig_h),
            actual: x.dims(),
        });
    }
    let p = grid.patch;
    let d = x.depth();
    let src = x.samples();
    let mut out = Vec::with_capacity(grid.len());
    for pr in 0..grid.rows {
        for pc in 0..grid.cols {
            let mut buf = vec![R::Sample::default(); p * p * d];
            let y0 = pr * p;
            let x0 = pc * p;
            let rows = p.min(grid.orig_h - y0);
            let cols = p.min(grid.orig_w - x0);
            for r in 0..rows {
                let s = ((y0 + r) * grid.orig_w + x0) * d;
                buf[r * p * d..(r * p + cols) * d].copy_from_slice(&src[s..s + cols * d]);
            }
            out.push(x.like(p, p, buf));
        }
    }
    Ok(out)
}

/// Stitch row-major patches back together, discarding padding.
pub fn reconstruct<R: Raster>(patches: &[R], grid: &PatchGrid) -> Result<R> {
    if patches.len() != grid.len() {
        return Err(Error::PatchCount {
            expected: grid.len(),
            actual: patches.len(),
        });
    }
    let p = grid.patch;
    for (i, patch) in patches.iter().enumerate() {
        if patch.dims() != (p, p) {
            return Err(Error::PatchSize {
                index: i,
                expected: p,
                actual: patch.dims(),
            });
        }
    }
    let d = patches[0].depth();
    let mut out = vec![R::Sample::default(); grid.orig_w * grid.orig_h * d];
    for (i, patch) in patches.iter().enumerate() {
        if patch.depth() != d {
            return Err(Error::PatchSize {
                index: i,
                expected: p,
                actual: patch.dims(),
            });
        }
        let (pr, pc) = (i / grid.cols, i % grid.cols);
        let y0 = pr * p;
        let x0 = pc * p;
        let rows = p.min(grid.orig_h - y0);
        let cols = p.min(grid.orig_w - x0);
        let src = patch.samples();
        for r in 0..rows {
            let dst = ((y0 + r) * grid.orig_w + x0) * d;
            out[dst..dst + cols * d].copy_from_slice(&src[r * p * d..(r * p + cols) * d]);
        }
    }
    Ok(patches[0].like(grid.orig_w, grid.orig_h, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{InstanceMask, MultiChannelImage};

    #[test]
    fn plan_examples() {
        let g = plan_grid(300, 200, 128);
        assert_eq!((g.rows, g.cols, g.pad_right, g.pad_bottom, g.len()), (2, 3, 84, 56, 6));
        let g = plan_grid(128, 128, 128);
        assert_eq!((g.rows, g.cols, g.pad_right, g.pad_bottom), (1, 1, 0, 0));
        let g = plan_grid(1, 1, 128);
        assert_eq!((g.rows, g.cols, g.pad_right, g.pad_bottom), (1, 1, 127, 127));
    }

    #[test]
    fn padded_patch_has_zero_columns() {
        let img = MultiChannelImage::unnamed(300, 200, 1, vec![1.0; 300 * 200]).unwrap();
        let g = plan_grid(300, 200, 128);
        let patches = extract_patches(&img, &g).unwrap();
        let last = &patches[g.cols + 2];
        let real_cols = 128 - g.pad_right;
        for r in 0..128 {
            for c in 0..128 {
                let v = last.get(r, c, 0);
                let inside = c < real_cols && r < 128 - g.pad_bottom;
                assert_eq!(v, if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mask_padding_adds_no_foreground() {
        let labels: Vec<u32> = (0..150 * 70).map(|i| (i % 7 == 0) as u32 * 3).collect();
        let m = InstanceMask::new(150, 70, labels).unwrap();
        let g = plan_grid(150, 70, 64);
        let patches = extract_patches(&m, &g).unwrap();
        let total: usize = patches.iter().map(|p| p.binarize().count_ones()).sum();
        assert_eq!(total, m.binarize().count_ones());
    }

    #[test]
    fn wrong_count_and_size_rejected() {
        let g = plan_grid(1, 1, 4);
        let p = InstanceMask::empty(4, 4);
        assert!(matches!(
            reconstruct(&vec![p.clone(); 6], &g),
            Err(Error::PatchCount { expected: 1, actual: 6 })
        ));
        assert!(matches!(
            reconstruct(&[InstanceMask::empty(3, 4)], &g),
            Err(Error::PatchSize { .. })
        ));
        let m = InstanceMask::empty(2, 2);
        assert!(extract_patches(&m, &g).is_err());
    }

    #[test]
    fn every_pixel_in_exactly_one_patch() {
        let (w, h) = (37, 23);
        let labels: Vec<u32> = (1..=(w * h) as u32).collect();
        let m = InstanceMask::new(w, h, labels).unwrap();
        let g = plan_grid(w, h, 8);
        let patches = extract_patches(&m, &g).unwrap();
        let mut seen = vec![0u32; w * h + 1];
        for p in &patches {
            for &l in p.labels() {
                seen[l as usize] += 1;
            }
        }
        assert!(seen[1..].iter().all(|&c| c == 1));
    }
}
