//! Channel duplication: building 6-channel endpoint states and unpacking
//! generated outputs.
//!
//! The bridge requires both endpoints to share one dimensionality. The input
//! state stacks the RGB image twice; the target state stacks the mask three
//! times and the reverse distance map three times. All endpoint channels
//! live in [−1, 1]: masks as ±1, distance maps affinely mapped from [0, 1],
//! images as v/127.5 − 1.

use crate::bridge::BridgeState;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, InstanceLabelMap};

/// RGB image mapped to [−1, 1], three channels.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    data: ImageTensor,
}

impl EncodedImage {
    pub fn new(data: ImageTensor) -> Result<Self> {
        data.ensure_channels(3, "EncodedImage")?;
        if let Some(v) = data.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "encoded image value {v} outside [-1, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Encodes 8-bit RGB samples via v/127.5 − 1.
    pub fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != h * w * 3 {
            return Err(Error::Shape {
                context: "EncodedImage::from_rgb8",
                expected: format!("{} bytes", h * w * 3),
                got: format!("{}", rgb.len()),
            });
        }
        let data = ImageTensor::from_fn(h, w, 3, |y, x, c| {
            rgb[(y * w + x) * 3 + c] as f32 / 127.5 - 1.0
        });
        Self::new(data)
    }

    pub fn tensor(&self) -> &ImageTensor {
        &self.data
    }
}

/// Ground-truth training targets for one image: binary mask encoded as ±1
/// and the raw reverse distance map in [0, 1].
#[derive(Debug, Clone)]
pub struct TargetPair {
    mask: ImageTensor,
    rdm: ImageTensor,
}

impl TargetPair {
    pub fn new(mask: ImageTensor, rdm: ImageTensor) -> Result<Self> {
        mask.ensure_channels(1, "TargetPair mask")?;
        rdm.ensure_channels(1, "TargetPair rdm")?;
        mask.ensure_same_shape(&rdm, "TargetPair")?;
        if let Some(v) = mask.data().iter().find(|&&v| v != -1.0 && v != 1.0) {
            return Err(Error::Domain(format!(
                "target mask value {v} is not in {{-1, +1}}"
            )));
        }
        if let Some(v) = rdm.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "reverse distance value {v} outside [0, 1]"
            )));
        }
        Ok(Self { mask, rdm })
    }

    /// Derives the ±1 mask from a label map (foreground = any instance) and
    /// pairs it with the given raw reverse distance map.
    pub fn from_labels(labels: &InstanceLabelMap, rdm: ImageTensor) -> Result<Self> {
        let mask = ImageTensor::from_fn(labels.height(), labels.width(), 1, |y, x, _| {
            if labels.get(y, x) != 0 {
                1.0
            } else {
                -1.0
            }
        });
        Self::new(mask, rdm)
    }

    pub fn mask(&self) -> &ImageTensor {
        &self.mask
    }

    pub fn rdm(&self) -> &ImageTensor {
        &self.rdm
    }
}

/// Which targets the bridge is trained to generate.
///
/// `Multi` is the paper's proposed configuration; the single-task variants
/// exist for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    /// Channels 0–2 mask, channels 3–5 reverse distance map.
    Multi,
    /// Mask replicated into all six channels.
    MaskOnly,
    /// Reverse distance map replicated into all six channels.
    RvdistOnly,
}

impl TaskMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(TaskMode::Multi),
            "mask" => Ok(TaskMode::MaskOnly),
            "rvdist" => Ok(TaskMode::RvdistOnly),
            other => Err(Error::config(
                "train.task",
                format!("unknown task '{other}' (expected multi, mask, or rvdist)"),
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskMode::Multi => "multi",
            TaskMode::MaskOnly => "mask",
            TaskMode::RvdistOnly => "rvdist",
        }
    }
}

/// Input state X₁ = (X, X): the observed image duplicated into six channels.
pub fn pack_input(img: &EncodedImage) -> BridgeState {
    let src = img.tensor();
    let (h, w, _) = src.shape();
    let mut out = ImageTensor::zeros(h, w, 6);
    for c in 0..3 {
        out.plane_mut(c).copy_from_slice(src.plane(c));
        out.plane_mut(c + 3).copy_from_slice(src.plane(c));
    }
    BridgeState { data: out, t: 1.0 }
}

/// Target state X₀ = (M, M, M, R, R, R) with the distance map mapped from
/// [0, 1] to [−1, 1].
pub fn pack_target(pair: &TargetPair) -> BridgeState {
    pack_target_for(pair, TaskMode::Multi)
}

/// Target state for a given task mode; `Multi` is [`pack_target`].
pub fn pack_target_for(pair: &TargetPair, mode: TaskMode) -> BridgeState {
    let (h, w, _) = pair.mask.shape();
    let mut out = ImageTensor::zeros(h, w, 6);
    let mask = pair.mask.plane(0);
    let rdm_mapped: Vec<f32> = pair.rdm.plane(0).iter().map(|&r| 2.0 * r - 1.0).collect();
    let (lo, hi): (&[f32], &[f32]) = match mode {
        TaskMode::Multi => (mask, &rdm_mapped),
        TaskMode::MaskOnly => (mask, mask),
        TaskMode::RvdistOnly => (&rdm_mapped, &rdm_mapped),
    };
    for c in 0..3 {
        out.plane_mut(c).copy_from_slice(lo);
        out.plane_mut(c + 3).copy_from_slice(hi);
    }
    BridgeState { data: out, t: 0.0 }
}

/// Averages each channel triple of a generated state and maps back to
/// [0, 1]: (mask probability, reverse-distance prediction).
///
/// Averaging happens before the affine map and the clamp, so overshooting
/// values influence the mean but the outputs always stay in range.
pub fn unpack_prediction(state: &BridgeState) -> Result<(ImageTensor, ImageTensor)> {
    state.data.ensure_channels(6, "unpack_prediction")?;
    let (h, w, _) = state.data.shape();
    let triple_mean = |base: usize| -> ImageTensor {
        let p0 = state.data.plane(base);
        let p1 = state.data.plane(base + 1);
        let p2 = state.data.plane(base + 2);
        let mut out = ImageTensor::zeros(h, w, 1);
        for (i, o) in out.plane_mut(0).iter_mut().enumerate() {
            let mean = (p0[i] as f64 + p1[i] as f64 + p2[i] as f64) / 3.0;
            *o = (((mean + 1.0) / 2.0).clamp(0.0, 1.0)) as f32;
        }
        out
    };
    Ok((triple_mean(0), triple_mean(3)))
}
