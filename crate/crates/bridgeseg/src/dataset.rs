//! On-disk dataset layout and loading.
//!
//! A dataset directory holds three parallel subdirectories keyed by stem:
//!
//! ```text
//! data/
//!   images/<stem>.png   RGB 8-bit image
//!   labels/<stem>.png   16-bit single-channel label map, 0 = background
//!   rdm/<stem>.bsgt     cached reverse distance map (float tensor)
//! ```
//!
//! Training requires all three files per item (reverse distance maps are
//! precomputed with the `rdm` subcommand or emitted by `synth`); inference
//! only needs the images.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::packing::{EncodedImage, TargetPair};
use crate::tensor::{ImageTensor, InstanceLabelMap};

pub const IMAGES_SUBDIR: &str = "images";
pub const LABELS_SUBDIR: &str = "labels";
pub const RDM_SUBDIR: &str = "rdm";

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub stem: String,
    pub image: EncodedImage,
    pub labels: InstanceLabelMap,
    pub rdm: ImageTensor,
}

impl DatasetItem {
    pub fn target_pair(&self) -> Result<TargetPair> {
        TargetPair::from_labels(&self.labels, self.rdm.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
}

/// Sorted (stem, path) list of `.png`/`.png16` files in a directory.
pub fn list_stems(dir: &Path, extensions: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if extensions.contains(&ext) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Lists the images of a dataset directory without loading them.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let images = list_stems(&dir.join(IMAGES_SUBDIR), &["png"])?;
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {}",
            dir.join(IMAGES_SUBDIR).display()
        )));
    }
    Ok(images)
}

impl Dataset {
    /// Loads the full (image, labels, rdm) triples of a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let images = list_images(dir)?;
        let mut items = Vec::with_capacity(images.len());
        for (stem, img_path) in images {
            let labels_path = dir.join(LABELS_SUBDIR).join(format!("{stem}.png"));
            let rdm_path = dir.join(RDM_SUBDIR).join(format!("{stem}.bsgt"));
            if !labels_path.is_file() {
                return Err(Error::Dataset(format!(
                    "missing label map {}",
                    labels_path.display()
                )));
            }
            if !rdm_path.is_file() {
                return Err(Error::Dataset(format!(
                    "missing reverse distance map {} (run the rdm subcommand first)",
                    rdm_path.display()
                )));
            }
            let (h, w, rgb) = io::read_rgb8(&img_path)?;
            let image = EncodedImage::from_rgb8(h, w, &rgb)?;
            let labels = io::read_label_map(&labels_path)?;
            if (labels.height(), labels.width()) != (h, w) {
                return Err(Error::Dataset(format!(
                    "{stem}: label map is {}x{} but image is {h}x{w}",
                    labels.height(),
                    labels.width()
                )));
            }
            if !labels.ids_dense() {
                return Err(Error::Dataset(format!(
                    "{stem}: instance ids are not dense from 1"
                )));
            }
            let rdm = io::read_image_tensor(&rdm_path)?;
            if rdm.shape() != (h, w, 1) {
                return Err(Error::Dataset(format!(
                    "{stem}: reverse distance map shape {:?} does not match image {h}x{w}x1",
                    rdm.shape()
                )));
            }
            if let Some(v) = rdm.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Dataset(format!(
                    "{stem}: reverse distance value {v} outside [0, 1]"
                )));
            }
            items.push(DatasetItem {
                stem,
                image,
                labels,
                rdm,
            });
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
