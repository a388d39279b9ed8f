//! Deterministic reverse generation: from an input image to a mask
//! probability map and a reverse-distance prediction, with optional
//! intermediate-state dumps.
//!
//! Noise injection is disabled; each step predicts x̂₀ from the current
//! state and traces the posterior mean to the next lower grid time, so the
//! result is a pure function of (image, denoiser parameters, schedule).

use crate::bridge::{predict_x0, reverse_step_mean};
use crate::error::{Error, Result};
use crate::instances::{connected_components, rvdist_to_mask};
use crate::model::Denoiser;
use crate::packing::{pack_input, unpack_prediction, EncodedImage, TaskMode};
use crate::schedule::NoiseSchedule;
use crate::tensor::{BinaryMask, ImageTensor, InstanceLabelMap};

/// Intermediate state recorded during generation.
#[derive(Debug, Clone)]
pub struct TrajectoryFrame {
    /// 1-based reverse step counter (step k lands on grid time n−k).
    pub step: usize,
    /// Time of the recorded state.
    pub t: f64,
    pub state: ImageTensor,
}

/// Runs the reverse recursion over the schedule grid from t=1 to t=0.
///
/// Returns (mask probability, reverse-distance prediction) from the final
/// state, plus every `dump_every`-th intermediate state when requested.
pub fn generate(
    img: &EncodedImage,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    dump_every: Option<usize>,
) -> Result<(ImageTensor, ImageTensor, Vec<TrajectoryFrame>)> {
    let grid = schedule.t_grid();
    let n = schedule.n_steps();
    let mut state = pack_input(img);
    let mut trajectory = Vec::new();
    for i in (1..=n).rev() {
        let step = n - i + 1;
        let t = grid[i];
        debug_assert_eq!(state.t, t);
        let wrap = |source: Error| Error::InferenceStep {
            step,
            t,
            source: Box::new(source),
        };
        let eps = denoiser.predict_eps(&state).map_err(wrap)?;
        let x0hat = predict_x0(&state, &eps, schedule).map_err(wrap)?;
        state = reverse_step_mean(&state, &x0hat, grid[i - 1], schedule).map_err(wrap)?;
        if !state.data.is_finite() {
            return Err(Error::NonFinite {
                context: format!("inference step {step} (t={t})"),
            });
        }
        if let Some(k) = dump_every {
            if k > 0 && step % k == 0 {
                trajectory.push(TrajectoryFrame {
                    step,
                    t: state.t,
                    state: state.data.clone(),
                });
            }
        }
    }
    let (mask_prob, rdm_pred) = unpack_prediction(&state)?;
    Ok((mask_prob, rdm_pred, trajectory))
}

/// Thresholds a probability map at 0.5; ties go to foreground.
pub fn binarize(prob: &ImageTensor) -> Result<BinaryMask> {
    prob.ensure_channels(1, "binarize")?;
    if let Some(v) = prob.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "probability value {v} outside [0, 1]"
        )));
    }
    let (h, w, _) = prob.shape();
    let plane = prob.plane(0);
    Ok(BinaryMask::from_fn(h, w, |y, x| plane[y * w + x] >= 0.5))
}

/// Converts generated outputs into a binary mask and an instance label map
/// according to the task the model was trained for: multi-task and
/// mask-only models threshold the averaged mask channels; the
/// distance-map-only ablation thresholds the distance prediction and fills
/// holes.
pub fn extract_instances(
    mask_prob: &ImageTensor,
    rdm_pred: &ImageTensor,
    task: TaskMode,
) -> Result<(BinaryMask, InstanceLabelMap)> {
    let mask = match task {
        TaskMode::Multi | TaskMode::MaskOnly => binarize(mask_prob)?,
        TaskMode::RvdistOnly => rvdist_to_mask(rdm_pred)?,
    };
    let labels = connected_components(&mask);
    Ok((mask, labels))
}
