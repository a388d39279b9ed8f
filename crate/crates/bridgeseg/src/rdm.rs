//! Reverse distance maps: boundary-emphasizing auxiliary targets computed
//! from ground-truth instance label maps.
//!
//! Per instance, the exact Euclidean distance transform gives each pixel its
//! distance to the nearest non-instance pixel (the image border counts as
//! background). Distances are then normalized per instance and inverted so
//! boundary-adjacent pixels carry the highest values, and the per-instance
//! maps are aggregated by pixelwise maximum (instance supports are disjoint,
//! so this is a disjoint union).

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, InstanceLabelMap};

const INF: f64 = 1e30;

/// One-dimensional squared distance transform (lower envelope of parabolas).
///
/// `f` holds per-cell seed costs (0 at seeds, INF elsewhere or the previous
/// pass); writes min over q of f[q] + (i−q)² into `d`.
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sep = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        let mut s = sep(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = sep(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = INF;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}

/// Exact squared Euclidean distance to the nearest seed (cells where
/// `seed(y, x)` is true) on an h×w grid. Two separable passes; results are
/// exact integers represented in f64.
fn squared_edt(h: usize, w: usize, seed: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let mut grid = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            grid[y * w + x] = if seed(y, x) { 0.0 } else { INF };
        }
    }
    let max_dim = h.max(w);
    let mut f = vec![0.0f64; max_dim];
    let mut d = vec![0.0f64; max_dim];
    let mut v = vec![0usize; max_dim];
    let mut z = vec![0.0f64; max_dim + 1];

    // Along rows.
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    // Along columns.
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    grid
}

/// Exact Euclidean distance transform of instance `k`: for pixels of the
/// instance, the distance to the nearest pixel outside it (the image border
/// is treated as a virtual background frame); zero elsewhere.
pub fn instance_edt(labels: &InstanceLabelMap, k: u32) -> Result<ImageTensor> {
    if !labels.contains_id(k) {
        return Err(Error::MissingInstance(k));
    }
    let (h, w) = (labels.height(), labels.width());
    // Pad by one background pixel on every side so border-touching instances
    // see the frame as non-instance.
    let (ph, pw) = (h + 2, w + 2);
    let sq = squared_edt(ph, pw, |y, x| {
        if y == 0 || x == 0 || y == ph - 1 || x == pw - 1 {
            true
        } else {
            labels.get(y - 1, x - 1) != k
        }
    });
    let mut out = ImageTensor::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            if labels.get(y, x) == k {
                out.set(y, x, 0, sq[(y + 1) * pw + (x + 1)].sqrt() as f32);
            }
        }
    }
    Ok(out)
}

/// Normalized, inverted distance map in [0, 1]; background pixels exactly 0.
#[derive(Debug, Clone)]
pub struct ReverseDistanceMap {
    data: ImageTensor,
}

impl ReverseDistanceMap {
    pub fn tensor(&self) -> &ImageTensor {
        &self.data
    }

    pub fn into_tensor(self) -> ImageTensor {
        self.data
    }

    /// Wraps a precomputed map (e.g. loaded from disk), checking range.
    pub fn from_tensor(data: ImageTensor) -> Result<Self> {
        data.ensure_channels(1, "ReverseDistanceMap")?;
        if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "reverse distance value {v} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }
}

/// Computes the aggregated reverse distance map of all instances.
///
/// Per instance with distances d and extrema d_min, d_max:
/// r = (d_max − d)/d_max when d_max > d_min, else r = 1 (degenerate
/// thin/single-pixel instances). An empty label map yields an all-zero map.
pub fn reverse_distance_map(labels: &InstanceLabelMap) -> ReverseDistanceMap {
    let (h, w) = (labels.height(), labels.width());
    let mut out = ImageTensor::zeros(h, w, 1);
    for k in labels.instance_ids() {
        let edt = instance_edt(labels, k).expect("id comes from the map");
        let mut d_min = f32::INFINITY;
        let mut d_max: f32 = 0.0;
        for y in 0..h {
            for x in 0..w {
                if labels.get(y, x) == k {
                    let d = edt.get(y, x, 0);
                    d_min = d_min.min(d);
                    d_max = d_max.max(d);
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                if labels.get(y, x) == k {
                    let r = if d_max > d_min {
                        ((d_max as f64 - edt.get(y, x, 0) as f64) / d_max as f64) as f32
                    } else {
                        1.0
                    };
                    let cur = out.get(y, x, 0);
                    if r > cur {
                        out.set(y, x, 0, r);
                    }
                }
            }
        }
    }
    ReverseDistanceMap { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_map(h: usize, w: usize, y0: usize, x0: usize, side: usize, id: u32) -> InstanceLabelMap {
        let mut m = InstanceLabelMap::zeros(h, w);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                m.set(y, x, id);
            }
        }
        m
    }

    #[test]
    fn single_pixel_instance_has_distance_one() {
        let mut m = InstanceLabelMap::zeros(5, 5);
        m.set(2, 2, 1);
        let edt = instance_edt(&m, 1).unwrap();
        assert_eq!(edt.get(2, 2, 0), 1.0);
        assert_eq!(edt.get(0, 0, 0), 0.0);
    }

    #[test]
    fn five_square_rings() {
        // 5×5 solid square inside a 9×9 map: border ring 1, inner ring 2, center 3.
        let m = square_map(9, 9, 2, 2, 5, 1);
        let edt = instance_edt(&m, 1).unwrap();
        for y in 2..7 {
            for x in 2..7 {
                let ring = (y as i64 - 4).abs().max((x as i64 - 4).abs());
                let expected = (3 - ring) as f32;
                assert_eq!(edt.get(y, x, 0), expected, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn border_touching_instance_sees_virtual_frame() {
        let m = square_map(4, 4, 0, 0, 2, 1);
        let edt = instance_edt(&m, 1).unwrap();
        // Every pixel of the 2×2 block touches either the frame or background.
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(edt.get(y, x, 0), 1.0);
            }
        }
    }

    #[test]
    fn missing_instance_is_an_error() {
        let m = square_map(4, 4, 1, 1, 2, 3);
        assert!(matches!(
            instance_edt(&m, 5),
            Err(Error::MissingInstance(5))
        ));
        assert!(instance_edt(&m, 3).is_ok());
    }

    #[test]
    fn empty_map_gives_all_zero_rdm() {
        let m = InstanceLabelMap::zeros(6, 6);
        let rdm = reverse_distance_map(&m);
        assert!(rdm.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn five_square_rdm_values() {
        let m = square_map(9, 9, 2, 2, 5, 1);
        let rdm = reverse_distance_map(&m);
        let expect = |ring: i64| -> f32 {
            match ring {
                2 => ((3.0 - 1.0) / 3.0) as f32,
                1 => ((3.0 - 2.0) / 3.0) as f32,
                _ => 0.0,
            }
        };
        for y in 2..7 {
            for x in 2..7 {
                let ring = (y as i64 - 4).abs().max((x as i64 - 4).abs());
                assert_eq!(rdm.tensor().get(y, x, 0), expect(ring), "at ({y},{x})");
            }
        }
        assert_eq!(rdm.tensor().get(0, 0, 0), 0.0);
    }

    #[test]
    fn degenerate_thin_instance_maps_to_one() {
        let mut m = InstanceLabelMap::zeros(4, 5);
        m.set(1, 1, 1);
        m.set(1, 2, 1);
        let rdm = reverse_distance_map(&m);
        assert_eq!(rdm.tensor().get(1, 1, 0), 1.0);
        assert_eq!(rdm.tensor().get(1, 2, 0), 1.0);
    }

    #[test]
    fn rdm_range_wrapper_validates() {
        assert!(ReverseDistanceMap::from_tensor(ImageTensor::constant(2, 2, 1, 0.5)).is_ok());
        assert!(ReverseDistanceMap::from_tensor(ImageTensor::constant(2, 2, 1, 1.5)).is_err());
    }
}
