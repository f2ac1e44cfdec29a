use serde::{Deserialize, Serialize};

use crate::types::{InstanceMask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 unused so provisional labels start at 1
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Label connected foreground regions 1..N, numbered by the row-major
/// position of each region's first pixel.
///
/// Any positive input label counts as foreground; existing instance
/// boundaries are ignored.
pub fn relabel_components(mask: &InstanceMask, connectivity: Connectivity) -> InstanceMask {
    let (w, h) = mask.dims();
    let src = mask.labels();
    let mut prov = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if src[i] == 0 {
                continue;
            }
            let mut neigh = [0u32; 4];
            let mut n = 0;
            if x > 0 && prov[i - 1] != 0 {
                neigh[n] = prov[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - w;
                if prov[up] != 0 {
                    neigh[n] = prov[up];
                    n += 1;
                }
                if connectivity == Connectivity::Eight {
                    if x > 0 && prov[up - 1] != 0 {
                        neigh[n] = prov[up - 1];
                        n += 1;
                    }
                    if x + 1 < w && prov[up + 1] != 0 {
                        neigh[n] = prov[up + 1];
                        n += 1;
                    }
                }
            }
            if n == 0 {
                prov[i] = sets.make();
            } else {
                let first = neigh[0];
                prov[i] = first;
                for &other in &neigh[1..n] {
                    sets.union(first, other);
                }
            }
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let labels = prov
        .iter()
        .map(|&p| {
            if p == 0 {
                return 0;
            }
            let root = sets.find(p) as usize;
            if final_of_root[root] == 0 {
                next += 1;
                final_of_root[root] = next;
            }
            final_of_root[root]
        })
        .collect();
    mask.like(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = InstanceMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(relabel_components(&m, Connectivity::Eight).cell_count(), 1);
        assert_eq!(relabel_components(&m, Connectivity::Four).cell_count(), 2);
    }

    #[test]
    fn empty_mask() {
        let m = InstanceMask::empty(5, 4);
        let out = relabel_components(&m, Connectivity::Eight);
        assert_eq!(out.cell_count(), 0);
    }

    #[test]
    fn numbering_follows_first_pixel() {
        // U shape: both arms start on row 0 and merge on the last row.
        #[rustfmt::skip]
        let m = InstanceMask::new(5, 3, vec![
            1, 0, 0, 0, 1,
            1, 0, 9, 0, 1,
            1, 1, 1, 1, 1,
        ]).unwrap();
        let out = relabel_components(&m, Connectivity::Four);
        assert_eq!(out.cell_count(), 1);
        assert!(out.labels().iter().all(|&l| l <= 1));
        #[rustfmt::skip]
        let m = InstanceMask::new(4, 2, vec![
            0, 0, 0, 5,
            5, 0, 0, 0,
        ]).unwrap();
        let out = relabel_components(&m, Connectivity::Eight);
        assert_eq!(out.labels(), &[0, 0, 0, 1, 2, 0, 0, 0]);
    }

    #[test]
    fn touching_instances_merge() {
        let m = InstanceMask::new(3, 1, vec![2, 3, 0]).unwrap();
        let out = relabel_components(&m, Connectivity::Eight);
        assert_eq!(out.labels(), &[1, 1, 0]);
    }

    #[test]
    fn anti_diagonal_chain_under_eight() {
        #[rustfmt::skip]
        let m = InstanceMask::new(3, 3, vec![
            0, 0, 1,
            0, 1, 0,
            1, 0, 0,
        ]).unwrap();
        assert_eq!(relabel_components(&m, Connectivity::Eight).cell_count(), 1);
        assert_eq!(relabel_components(&m, Connectivity::Four).cell_count(), 3);
    }
}
