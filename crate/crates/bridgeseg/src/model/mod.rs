//! Denoiser abstraction, the reference convolutional denoiser with analytic
//! gradients, optimizer state, and the training loop.

mod denoiser;
mod optim;
mod train;

pub use denoiser::{
    loss_and_grad, DenoiserParams, LayerKind, LayerShape, ReferenceDenoiser,
};
pub use optim::{adam_step, ema_update, AdamHyper, AdamState};
pub use train::{train, TrainResult};

use crate::bridge::{training_target, BridgeState};
use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

/// Callable contract of a denoiser: maps a bridge state (carrying its time
/// tag) to a noise prediction of the same shape. Implementations must be
/// deterministic given (state, parameters).
pub trait Denoiser {
    fn predict_eps(&self, state: &BridgeState) -> Result<ImageTensor>;
}

/// Test oracle that returns the exact regression target (X_t − X₀)/σ_t for
/// a held ground-truth X₀. Deterministic inference driven by this denoiser
/// must recover X₀.
pub struct OracleDenoiser {
    x0: ImageTensor,
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(x0: ImageTensor, schedule: NoiseSchedule) -> Self {
        Self { x0, schedule }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_eps(&self, state: &BridgeState) -> Result<ImageTensor> {
        training_target(state, &self.x0, &self.schedule)
    }
}
