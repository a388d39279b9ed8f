//! Training loop: time sampling, bridge noising, loss/gradient, Adam, EMA,
//! checkpointing, and the loss curve.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::denoiser::{loss_and_grad, DenoiserParams};
use super::optim::{adam_step, ema_update, AdamHyper, AdamState};
use crate::bridge::{sample_xt, training_target};
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint};
use crate::packing::{pack_input, pack_target_for};
use crate::tensor::ImageTensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.bseg";
pub const LOSS_FILE: &str = "loss.csv";
const CHECKPOINT_EVERY: usize = 1000;

#[derive(Debug)]
pub struct TrainResult {
    pub params: DenoiserParams,
    pub adam: AdamState,
    pub adam_steps: u64,
    /// Per-iteration loss values.
    pub losses: Vec<f64>,
}

/// Serializes the loss curve as `iteration,loss` CSV text.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

/// Trains the reference denoiser on a dataset of (image, mask, rdm) triples.
///
/// One iteration: draw a batch of items, per item draw t uniformly from
/// (ε_t, 1] with ε_t the first grid point, sample X_t from the analytic
/// posterior, regress the bridge target, then take an Adam step and update
/// the EMA. Fully reproducible for a fixed seed.
///
/// With `run_dir` set, writes `checkpoint.bseg` (periodically and at the
/// end) and `loss.csv`.
pub fn train(cfg: &RunConfig, dataset: &Dataset, run_dir: Option<&Path>) -> Result<TrainResult> {
    cfg.validate_for_train()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("training dataset is empty".into()));
    }
    let schedule = cfg.schedule()?;
    let task = cfg.train_task;

    // Endpoint states are fixed per item; pack them once.
    let mut endpoints: Vec<(ImageTensor, ImageTensor)> = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        let pair = item.target_pair()?;
        let x0 = pack_target_for(&pair, task).data;
        let x1 = pack_input(&item.image).data;
        endpoints.push((x0, x1));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let mut params = DenoiserParams::new(cfg.model_width, cfg.model_depth, cfg.train_ema_decay)?;
    params.init_random(&mut rng);
    let mut adam = AdamState::new(params.len());
    let hyper = AdamHyper::with_lr(cfg.train_lr);
    let eps_t = 1.0 / schedule.n_steps() as f64;

    let mut losses = Vec::with_capacity(cfg.train_iters);
    let save = |params: &DenoiserParams,
                adam: &AdamState,
                steps: u64,
                rng: &ChaCha8Rng,
                dir: &Path|
     -> Result<()> {
        io::write_checkpoint(
            &dir.join(CHECKPOINT_FILE),
            &Checkpoint {
                task,
                params: params.clone(),
                adam: adam.clone(),
                adam_steps: steps,
                rng_seed: rng.get_seed(),
                rng_word_pos: rng.get_word_pos(),
            },
        )
    };

    for iter in 0..cfg.train_iters {
        let mut batch = Vec::with_capacity(cfg.train_batch);
        for _ in 0..cfg.train_batch {
            let idx = rng.random_range(0..dataset.len());
            let t = eps_t + rng.random::<f64>() * (1.0 - eps_t);
            let (x0, x1) = &endpoints[idx];
            let xt = sample_xt(x0, x1, t, &schedule, &mut rng)?;
            let target = training_target(&xt, x0, &schedule)?;
            batch.push((xt, target));
        }
        let loss = loss_and_grad(&mut params, &batch)?;
        adam_step(&mut params, &mut adam, hyper, iter as u64)?;
        ema_update(&mut params);
        losses.push(loss);
        if let Some(dir) = run_dir {
            if (iter + 1) % CHECKPOINT_EVERY == 0 && iter + 1 < cfg.train_iters {
                save(&params, &adam, (iter + 1) as u64, &rng, dir)?;
            }
        }
    }

    if let Some(dir) = run_dir {
        save(&params, &adam, cfg.train_iters as u64, &rng, dir)?;
        io::atomic_write(&dir.join(LOSS_FILE), loss_curve_csv(&losses).as_bytes())?;
    }

    Ok(TrainResult {
        params,
        adam,
        adam_steps: cfg.train_iters as u64,
        losses,
    })
}
