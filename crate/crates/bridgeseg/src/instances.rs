//! Instance extraction and shape analysis: connected components, hole
//! filling for the distance-map ablation path, and per-instance shape
//! statistics.

use crate::error::Result;
use crate::inference::binarize;
use crate::tensor::{BinaryMask, ImageTensor, InstanceLabelMap};

/// Disjoint-set forest with union by size and path compression.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len as u32).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, id: u32) -> u32 {
        let mut root = id;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = id;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        if self.size[ra as usize] >= self.size[rb as usize] {
            self.parent[rb as usize] = ra;
            self.size[ra as usize] += self.size[rb as usize];
        } else {
            self.parent[ra as usize] = rb;
            self.size[rb as usize] += self.size[ra as usize];
        }
    }
}

/// 4-connectivity component labeling. Instance ids are assigned in
/// raster-scan first-touch order starting at 1; background stays 0.
pub fn connected_components(mask: &BinaryMask) -> InstanceLabelMap {
    let (h, w) = (mask.height(), mask.width());
    let mut provisional = vec![0u32; h * w]; // 0 = background, else id+1
    let mut uf = UnionFind::new(h * w);
    let mut next: u32 = 0;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let up = if y > 0 { provisional[(y - 1) * w + x] } else { 0 };
            let left = if x > 0 { provisional[y * w + x - 1] } else { 0 };
            let id = match (up, left) {
                (0, 0) => {
                    next += 1;
                    next
                }
                (u, 0) => u,
                (0, l) => l,
                (u, l) => {
                    uf.union(u - 1, l - 1);
                    u.min(l)
                }
            };
            provisional[y * w + x] = id;
        }
    }

    let mut out = InstanceLabelMap::zeros(h, w);
    let mut final_of_root = vec![0u32; next as usize + 1];
    let mut assigned: u32 = 0;
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = uf.find(p - 1) + 1;
            let slot = &mut final_of_root[root as usize];
            if *slot == 0 {
                assigned += 1;
                *slot = assigned;
            }
            out.set(y, x, *slot);
        }
    }
    out
}

/// Fills enclosed holes: background components not 4-connected to the image
/// border become foreground. Idempotent and monotone.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let mut reachable = vec![false; h * w];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let push = |y: usize, x: usize, reachable: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        if !mask.get(y, x) && !reachable[y * w + x] {
            reachable[y * w + x] = true;
            stack.push((y, x));
        }
    };
    for x in 0..w {
        push(0, x, &mut reachable, &mut stack);
        push(h - 1, x, &mut reachable, &mut stack);
    }
    for y in 0..h {
        push(y, 0, &mut reachable, &mut stack);
        push(y, w - 1, &mut reachable, &mut stack);
    }
    while let Some((y, x)) = stack.pop() {
        let mut visit = |ny: usize, nx: usize| {
            if !mask.get(ny, nx) && !reachable[ny * w + nx] {
                reachable[ny * w + nx] = true;
                stack.push((ny, nx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    BinaryMask::from_fn(h, w, |y, x| mask.get(y, x) || !reachable[y * w + x])
}

/// Ablation path for distance-map-only models: threshold the predicted
/// reverse distance map at 0.5, then fill holes (cell interiors have low
/// reverse distance, so thresholding leaves ring-shaped shells).
pub fn rvdist_to_mask(rdm_pred: &ImageTensor) -> Result<BinaryMask> {
    Ok(fill_holes(&binarize(rdm_pred)?))
}

/// Area, perimeter, and circularity of one instance.
///
/// Perimeter is the crack-edge count: unit edges between an instance pixel
/// and anything else (other instances, background, or the image border).
/// Under this convention circularity = 4π·area/perimeter² peaks at π/4 for
/// squares; values are comparable within the convention only.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStat {
    pub id: u32,
    pub area: u64,
    pub perimeter: u64,
    pub circularity: f64,
}

/// Per-instance shape statistics, ordered by instance id.
pub fn shape_stats(labels: &InstanceLabelMap) -> Vec<ShapeStat> {
    let (h, w) = (labels.height(), labels.width());
    let max_id = labels.max_id() as usize;
    if max_id == 0 {
        return Vec::new();
    }
    let mut area = vec![0u64; max_id + 1];
    let mut perimeter = vec![0u64; max_id + 1];
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(y, x);
            if id == 0 {
                continue;
            }
            area[id as usize] += 1;
            let mut edges = 0u64;
            if y == 0 || labels.get(y - 1, x) != id {
                edges += 1;
            }
            if y + 1 == h || labels.get(y + 1, x) != id {
                edges += 1;
            }
            if x == 0 || labels.get(y, x - 1) != id {
                edges += 1;
            }
            if x + 1 == w || labels.get(y, x + 1) != id {
                edges += 1;
            }
            perimeter[id as usize] += edges;
        }
    }
    (1..=max_id as u32)
        .filter(|&id| area[id as usize] > 0)
        .map(|id| {
            let a = area[id as usize];
            let p = perimeter[id as usize];
            ShapeStat {
                id,
                area: a,
                perimeter: p,
                circularity: 4.0 * std::f64::consts::PI * a as f64 / (p * p) as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |y, x| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn empty_mask_labels_nothing() {
        let m = BinaryMask::zeros(4, 4);
        let labels = connected_components(&m);
        assert_eq!(labels.max_id(), 0);
    }

    #[test]
    fn diagonal_pixels_are_two_instances() {
        let m = mask_from(&["#.", ".#"]);
        let labels = connected_components(&m);
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(1, 1), 2);
    }

    #[test]
    fn raster_first_touch_ordering() {
        let m = mask_from(&["..#", "#.#", "#.."]);
        let labels = connected_components(&m);
        assert_eq!(labels.get(0, 2), 1);
        assert_eq!(labels.get(1, 0), 2);
        assert_eq!(labels.get(1, 2), 1);
        assert_eq!(labels.get(2, 0), 2);
    }

    #[test]
    fn u_shape_merges_into_one_component() {
        // The two arms only join at the bottom; union-find must merge them.
        let m = mask_from(&["#.#", "#.#", "###"]);
        let labels = connected_components(&m);
        assert_eq!(labels.max_id(), 1);
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(0, 2), 1);
    }

    #[test]
    fn fill_holes_solid_square_unchanged() {
        let m = mask_from(&["###", "###", "###"]);
        assert_eq!(fill_holes(&m), m);
    }

    #[test]
    fn fill_holes_ring_becomes_solid() {
        let ring = mask_from(&["#####", "#...#", "#...#", "#...#", "#####"]);
        let filled = fill_holes(&ring);
        assert_eq!(filled.count_foreground(), 25);
    }

    #[test]
    fn fill_holes_respects_one_pixel_gap_to_border() {
        // Background escapes through the gap in the top wall, so nothing fills.
        let open = mask_from(&["##.##", "#...#", "#...#", "#...#", "#####"]);
        assert_eq!(fill_holes(&open), open);
    }

    #[test]
    fn fill_holes_idempotent() {
        let ring = mask_from(&["#####", "#...#", "#.#.#", "#...#", "#####"]);
        let once = fill_holes(&ring);
        assert_eq!(fill_holes(&once), once);
    }

    #[test]
    fn rvdist_ring_fills_to_disk() {
        let rdm = ImageTensor::from_fn(5, 5, 1, |y, x, _| {
            let ring = y == 0 || y == 4 || x == 0 || x == 4;
            if ring {
                0.9
            } else {
                0.1
            }
        });
        let mask = rvdist_to_mask(&rdm).unwrap();
        assert_eq!(mask.count_foreground(), 25);
    }

    #[test]
    fn rvdist_all_zero_is_empty() {
        let rdm = ImageTensor::zeros(4, 4, 1);
        assert_eq!(rvdist_to_mask(&rdm).unwrap().count_foreground(), 0);
    }

    #[test]
    fn rvdist_rejects_out_of_range() {
        let rdm = ImageTensor::constant(2, 2, 1, 1.5);
        assert!(rvdist_to_mask(&rdm).is_err());
    }

    #[test]
    fn shape_stats_hand_counts() {
        let mut labels = InstanceLabelMap::zeros(8, 8);
        labels.set(0, 0, 1); // 1×1
        for (y, x) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            labels.set(y, x, 2); // 2×2
        }
        for x in 2..6 {
            labels.set(6, x, 3); // 1×4
        }
        let stats = shape_stats(&labels);
        assert_eq!(stats.len(), 3);
        assert_eq!((stats[0].area, stats[0].perimeter), (1, 4));
        assert!((stats[0].circularity - std::f64::consts::PI / 4.0).abs() < 1e-12);
        assert_eq!((stats[1].area, stats[1].perimeter), (4, 8));
        assert!((stats[1].circularity - std::f64::consts::PI / 4.0).abs() < 1e-12);
        assert_eq!((stats[2].area, stats[2].perimeter), (4, 10));
        assert!((stats[2].circularity - 16.0 * std::f64::consts::PI / 100.0).abs() < 1e-12);
    }

    #[test]
    fn shape_stats_empty_map() {
        assert!(shape_stats(&InstanceLabelMap::zeros(3, 3)).is_empty());
    }
}
