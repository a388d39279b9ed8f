//! Adam optimizer and the exponential moving average of parameters.

use super::denoiser::DenoiserParams;
use crate::error::{Error, Result};

/// Adam hyperparameters; the defaults follow common practice and only the
/// learning rate is exposed through the run configuration.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers; persist across steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update with bias correction. `step_index` is zero-based: the
/// first call passes 0.
pub fn adam_step(
    params: &mut DenoiserParams,
    adam: &mut AdamState,
    hyper: AdamHyper,
    step_index: u64,
) -> Result<()> {
    if adam.m.len() != params.len() {
        return Err(Error::Shape {
            context: "adam_step",
            expected: format!("{} moments", params.len()),
            got: format!("{}", adam.m.len()),
        });
    }
    if params.grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam_step gradients".into(),
        });
    }
    let t = (step_index + 1) as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for i in 0..params.values.len() {
        let g = params.grads[i];
        adam.m[i] = hyper.beta1 * adam.m[i] + (1.0 - hyper.beta1) * g;
        adam.v[i] = hyper.beta2 * adam.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = adam.m[i] / bc1;
        let v_hat = adam.v[i] / bc2;
        params.values[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// ema ← decay·ema + (1−decay)·values.
pub fn ema_update(params: &mut DenoiserParams) {
    let decay = params.ema_decay;
    for (e, &v) in params.ema_values.iter_mut().zip(&params.values) {
        *e = decay * *e + (1.0 - decay) * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> DenoiserParams {
        DenoiserParams::new(2, 1, 0.999).unwrap()
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = small_params();
        p.values.fill(0.3);
        let before = p.values.clone();
        let mut adam = AdamState::new(p.len());
        adam_step(&mut p, &mut adam, AdamHyper::with_lr(0.1), 0).unwrap();
        assert_eq!(p.values, before);
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_grad() {
        // Bias correction makes m̂ = g and v̂ = g² on step one, so the update
        // is −lr·g/(|g| + eps) ≈ −lr for g = 1.
        let mut p = small_params();
        p.grads.fill(1.0);
        let mut adam = AdamState::new(p.len());
        adam_step(&mut p, &mut adam, AdamHyper::with_lr(0.1), 0).unwrap();
        for &v in &p.values {
            assert!((v + 0.1).abs() < 1e-6, "expected ≈ -0.1, got {v}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize f(x) = (x − 2)² coordinate-wise through the params
        // vector; two identical steps must shrink the loss.
        let mut p = small_params();
        let mut adam = AdamState::new(p.len());
        let loss = |vals: &[f64]| vals.iter().map(|&x| (x - 2.0) * (x - 2.0)).sum::<f64>();
        let start = loss(&p.values);
        for step in 0..2 {
            for (g, &x) in p.grads.iter_mut().zip(&p.values) {
                *g = 2.0 * (x - 2.0);
            }
            adam_step(&mut p, &mut adam, AdamHyper::with_lr(0.05), step).unwrap();
        }
        assert!(loss(&p.values) < start);
    }

    #[test]
    fn non_finite_grads_rejected() {
        let mut p = small_params();
        p.grads[0] = f64::NAN;
        let mut adam = AdamState::new(p.len());
        assert!(adam_step(&mut p, &mut adam, AdamHyper::with_lr(0.1), 0).is_err());
    }

    #[test]
    fn ema_tracks_values_geometrically() {
        let mut p = small_params();
        p.values.fill(1.0);
        p.ema_values.fill(0.0);
        p.ema_decay = 0.9;
        let mut gap = 1.0;
        for _ in 0..5 {
            ema_update(&mut p);
            gap *= 0.9;
            for &e in &p.ema_values {
                assert!((e - (1.0 - gap)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_decay_extremes() {
        let mut p = small_params();
        p.values.fill(0.7);
        p.ema_values.fill(0.2);
        p.ema_decay = 0.0;
        ema_update(&mut p);
        assert!(p.ema_values.iter().all(|&e| e == 0.7));
        p.ema_decay = 1.0;
        p.values.fill(0.9);
        ema_update(&mut p);
        assert!(p.ema_values.iter().all(|&e| e == 0.7));
    }
}
