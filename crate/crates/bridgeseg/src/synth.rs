//! Synthetic desk-scale dataset: randomly placed shaded ellipses over a
//! textured background, with instance gaps mirroring ground truth in which
//! boundaries between touching cells are labeled as background.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{IMAGES_SUBDIR, LABELS_SUBDIR, RDM_SUBDIR};
use crate::error::{Error, Result};
use crate::io;
use crate::rdm::reverse_distance_map;
use crate::tensor::InstanceLabelMap;

/// Placement attempts per ellipse before the density is declared
/// unsatisfiable.
const MAX_TRIES: usize = 200;

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    /// Number of images to generate.
    pub n: usize,
    /// Image side length (square images), at least 16.
    pub size: usize,
    /// Instances per image.
    pub density: usize,
    pub seed: u64,
}

#[derive(Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    /// Semi-axes; full axes span 3–8 px.
    a: f64,
    b: f64,
    rot: f64,
}

impl Ellipse {
    /// Normalized squared elliptical radius of a pixel center; ≤ 1 inside.
    fn rho2(&self, y: usize, x: usize) -> f64 {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        let (sin, cos) = self.rot.sin_cos();
        let u = (dx * cos + dy * sin) / self.a;
        let v = (-dx * sin + dy * cos) / self.b;
        u * u + v * v
    }
}

fn rasterize(e: &Ellipse, size: usize) -> Vec<(usize, usize)> {
    let r = e.a.max(e.b).ceil() as i64 + 1;
    let mut pixels = Vec::new();
    for y in (e.cy as i64 - r).max(0)..=(e.cy as i64 + r).min(size as i64 - 1) {
        for x in (e.cx as i64 - r).max(0)..=(e.cx as i64 + r).min(size as i64 - 1) {
            if e.rho2(y as usize, x as usize) <= 1.0 {
                pixels.push((y as usize, x as usize));
            }
        }
    }
    pixels
}

/// True when the candidate pixels keep a one-pixel background gap to every
/// existing instance: no candidate pixel may coincide with or share a
/// 4-neighbor edge with occupied ground.
fn gap_ok(pixels: &[(usize, usize)], labels: &InstanceLabelMap) -> bool {
    let (h, w) = (labels.height(), labels.width());
    for &(y, x) in pixels {
        if labels.get(y, x) != 0 {
            return false;
        }
        if y > 0 && labels.get(y - 1, x) != 0 {
            return false;
        }
        if y + 1 < h && labels.get(y + 1, x) != 0 {
            return false;
        }
        if x > 0 && labels.get(y, x - 1) != 0 {
            return false;
        }
        if x + 1 < w && labels.get(y, x + 1) != 0 {
            return false;
        }
    }
    true
}

fn place_instances(
    size: usize,
    density: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(InstanceLabelMap, Vec<Ellipse>)> {
    let mut labels = InstanceLabelMap::zeros(size, size);
    let mut ellipses = Vec::with_capacity(density);
    for k in 1..=density {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let e = Ellipse {
                cy: rng.random_range(1.0..size as f64 - 1.0),
                cx: rng.random_range(1.0..size as f64 - 1.0),
                a: rng.random_range(1.5..4.0),
                b: rng.random_range(1.5..4.0),
                rot: rng.random_range(0.0..std::f64::consts::PI),
            };
            let pixels = rasterize(&e, size);
            if pixels.is_empty() || !gap_ok(&pixels, &labels) {
                continue;
            }
            for &(y, x) in &pixels {
                labels.set(y, x, k as u32);
            }
            ellipses.push(e);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place instance {k} of {density} after {MAX_TRIES} attempts; \
                 lower the density or increase the image size"
            )));
        }
    }
    Ok((labels, ellipses))
}

/// Smooth background texture: bilinear interpolation of a coarse random
/// grid, values roughly in [-1, 1].
fn texture_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const COARSE: usize = 5;
    let grid: Vec<f64> = (0..COARSE * COARSE)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut field = vec![0.0f64; size * size];
    let scale = (COARSE - 1) as f64 / (size - 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let gy = y as f64 * scale;
            let gx = x as f64 * scale;
            let y0 = (gy as usize).min(COARSE - 2);
            let x0 = (gx as usize).min(COARSE - 2);
            let fy = gy - y0 as f64;
            let fx = gx - x0 as f64;
            let g = |yy: usize, xx: usize| grid[yy * COARSE + xx];
            field[y * size + x] = g(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + g(y0, x0 + 1) * (1.0 - fy) * fx
                + g(y0 + 1, x0) * fy * (1.0 - fx)
                + g(y0 + 1, x0 + 1) * fy * fx;
        }
    }
    field
}

fn render_image(
    size: usize,
    labels: &InstanceLabelMap,
    ellipses: &[Ellipse],
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    // Light pinkish background, darker purple cells: roughly H&E-like and,
    // importantly, nowhere near trivially thresholdable at mid-gray.
    let bg_base = [
        188.0 + rng.random_range(-10.0..10.0),
        166.0 + rng.random_range(-10.0..10.0),
        182.0 + rng.random_range(-10.0..10.0),
    ];
    let texture = texture_field(size, rng);
    let cell_base: Vec<[f64; 3]> = (0..ellipses.len())
        .map(|_| {
            [
                100.0 + rng.random_range(-24.0..24.0),
                70.0 + rng.random_range(-20.0..20.0),
                138.0 + rng.random_range(-24.0..24.0),
            ]
        })
        .collect();

    let mut out = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let id = labels.get(y, x);
            let mut px = [0.0f64; 3];
            if id == 0 {
                let t = texture[y * size + x] * 9.0;
                for c in 0..3 {
                    px[c] = bg_base[c] + t;
                }
            } else {
                let e = &ellipses[(id - 1) as usize];
                // Radial shading: darkest at the center, lighter at the rim.
                let shade = 0.78 + 0.34 * e.rho2(y, x).min(1.0);
                for c in 0..3 {
                    px[c] = cell_base[(id - 1) as usize][c] * shade;
                }
            }
            for c in 0..3 {
                let z: f64 = StandardNormal.sample(rng);
                let v = px[c] + 4.0 * z;
                out[(y * size + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Generates `cfg.n` items under `out_dir` (images/, labels/, rdm/).
/// Fully reproducible for a fixed seed.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    if cfg.size < 16 {
        return Err(Error::config(
            "size",
            format!("must be at least 16, got {}", cfg.size),
        ));
    }
    for sub in [IMAGES_SUBDIR, LABELS_SUBDIR, RDM_SUBDIR] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.n {
        let stem = format!("item_{i:05}");
        let (labels, ellipses) = place_instances(cfg.size, cfg.density, &mut rng)?;
        let rgb = render_image(cfg.size, &labels, &ellipses, &mut rng);
        let rdm = reverse_distance_map(&labels);
        io::write_rgb8(
            &out_dir.join(IMAGES_SUBDIR).join(format!("{stem}.png")),
            cfg.size,
            cfg.size,
            &rgb,
        )?;
        io::write_label_map(
            &out_dir.join(LABELS_SUBDIR).join(format!("{stem}.png")),
            &labels,
        )?;
        io::write_image_tensor(
            &out_dir.join(RDM_SUBDIR).join(format!("{stem}.bsgt")),
            rdm.tensor(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_gives_blank_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (labels, ellipses) = place_instances(32, 0, &mut rng).unwrap();
        assert_eq!(labels.max_id(), 0);
        assert!(ellipses.is_empty());
        let img = render_image(32, &labels, &ellipses, &mut rng);
        assert_eq!(img.len(), 32 * 32 * 3);
    }

    #[test]
    fn instances_never_share_a_4neighbor_edge() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (labels, _) = place_instances(32, 8, &mut rng).unwrap();
            let (h, w) = (labels.height(), labels.width());
            for y in 0..h {
                for x in 0..w {
                    let id = labels.get(y, x);
                    if id == 0 {
                        continue;
                    }
                    if y + 1 < h {
                        let other = labels.get(y + 1, x);
                        assert!(other == 0 || other == id);
                    }
                    if x + 1 < w {
                        let other = labels.get(y, x + 1);
                        assert!(other == 0 || other == id);
                    }
                }
            }
        }
    }

    #[test]
    fn ids_are_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (labels, _) = place_instances(32, 6, &mut rng).unwrap();
        assert!(labels.ids_dense());
        assert_eq!(labels.max_id(), 6);
    }

    #[test]
    fn unsatisfiable_density_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = place_instances(16, 200, &mut rng).unwrap_err();
        assert!(err.to_string().contains("density"));
    }
}
