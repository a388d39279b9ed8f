//! Closed-form Schrödinger bridge mathematics for paired endpoints.
//!
//! With both endpoints observed, the intermediate state has a Gaussian
//! posterior whose mean mixes the endpoints by their accumulated variances
//! and whose covariance is isotropic:
//!
//! ```text
//! μ_t = σ̄_t²/(σ̄_t²+σ_t²)·X₀ + σ_t²/(σ̄_t²+σ_t²)·X₁
//! Σ_t = σ_t²σ̄_t²/(σ̄_t²+σ_t²)·I
//! ```
//!
//! Everything here is a pure function of its inputs (plus an explicit RNG
//! where sampling is requested), so callers may fan out over batch elements
//! freely.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

/// A state of the bridge process at a tagged time.
///
/// The pipeline packs endpoints as 6-channel tensors; the bridge algebra
/// itself is channel-agnostic, so scalar (1×1×1) states are fine for tests.
#[derive(Debug, Clone)]
pub struct BridgeState {
    pub data: ImageTensor,
    pub t: f64,
}

impl BridgeState {
    pub fn new(data: ImageTensor, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("state time {t} outside [0, 1]")));
        }
        Ok(Self { data, t })
    }
}

/// Posterior mean and (scalar, isotropic) variance of X_t given both
/// endpoints.
pub fn posterior_params(
    x0: &ImageTensor,
    x1: &ImageTensor,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<(ImageTensor, f64)> {
    x0.ensure_same_shape(x1, "posterior_params")?;
    let (s2f, s2b) = schedule.sigma2_at(t)?;
    let denom = s2f + s2b;
    let w0 = s2b / denom;
    let w1 = s2f / denom;
    let var = s2f * s2b / denom;
    let (h, w, c) = x0.shape();
    let mut mu = ImageTensor::zeros(h, w, c);
    for ((m, &a), &b) in mu.data_mut().iter_mut().zip(x0.data()).zip(x1.data()) {
        *m = (w0 * a as f64 + w1 * b as f64) as f32;
    }
    Ok((mu, var))
}

/// Draws X_t ~ N(μ_t, var·I). Bit-reproducible for a fixed RNG stream; at
/// t=0 and t=1 the variance vanishes and the matching endpoint is returned
/// exactly.
pub fn sample_xt<R: Rng>(
    x0: &ImageTensor,
    x1: &ImageTensor,
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<BridgeState> {
    let (mut mu, var) = posterior_params(x0, x1, t, schedule)?;
    let sd = var.sqrt();
    for m in mu.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *m = (*m as f64 + sd * z) as f32;
    }
    BridgeState::new(mu, t)
}

/// Regression target for the denoiser: (X_t − X₀)/σ_t.
pub fn training_target(
    xt: &BridgeState,
    x0: &ImageTensor,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    xt.data.ensure_same_shape(x0, "training_target")?;
    let (sigma_fwd, _) = schedule.sigma_at(xt.t)?;
    if sigma_fwd == 0.0 {
        return Err(Error::Domain(format!(
            "training target undefined at t={} (σ_t = 0); sample t from (ε_t, 1]",
            xt.t
        )));
    }
    let (h, w, c) = x0.shape();
    let mut out = ImageTensor::zeros(h, w, c);
    for ((o, &a), &b) in out.data_mut().iter_mut().zip(xt.data.data()).zip(x0.data()) {
        *o = ((a as f64 - b as f64) / sigma_fwd) as f32;
    }
    Ok(out)
}

/// Reconstructs the target endpoint from a noise prediction:
/// x̂₀ = X_t − σ_t·ε.
pub fn predict_x0(
    xt: &BridgeState,
    eps: &ImageTensor,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    xt.data.ensure_same_shape(eps, "predict_x0")?;
    let (sigma_fwd, _) = schedule.sigma_at(xt.t)?;
    let (h, w, c) = eps.shape();
    let mut out = ImageTensor::zeros(h, w, c);
    for ((o, &a), &e) in out.data_mut().iter_mut().zip(xt.data.data()).zip(eps.data()) {
        *o = (a as f64 - sigma_fwd * e as f64) as f32;
    }
    Ok(out)
}

/// Shared core of the reverse recursion over the sub-interval [s, t].
///
/// With a² the variance accumulated on [0, s] and b² the variance on
/// [s, t], the posterior of X_s given (x̂₀, X_t) has
///
/// ```text
/// mean = b²/(a²+b²)·x̂₀ + a²/(a²+b²)·X_t      var = a²b²/(a²+b²)
/// ```
fn reverse_step_core(
    xt: &BridgeState,
    x0hat: &ImageTensor,
    s: f64,
    schedule: &NoiseSchedule,
) -> Result<(ImageTensor, f64)> {
    xt.data.ensure_same_shape(x0hat, "reverse_step")?;
    if !(0.0..=1.0).contains(&s) || s >= xt.t {
        return Err(Error::Domain(format!(
            "reverse step needs 0 <= s < t <= 1, got s={s}, t={}",
            xt.t
        )));
    }
    let (a2, _) = schedule.sigma2_at(s)?;
    let (t2, _) = schedule.sigma2_at(xt.t)?;
    let b2 = (t2 - a2).max(0.0);
    let denom = a2 + b2;
    let w_hat = b2 / denom;
    let w_cur = a2 / denom;
    let var = a2 * b2 / denom;
    let (h, w, c) = x0hat.shape();
    let mut mean = ImageTensor::zeros(h, w, c);
    for ((m, &hat), &cur) in mean
        .data_mut()
        .iter_mut()
        .zip(x0hat.data())
        .zip(xt.data.data())
    {
        *m = (w_hat * hat as f64 + w_cur * cur as f64) as f32;
    }
    Ok((mean, var))
}

/// Deterministic reverse step: traces the posterior mean down to time `s`.
/// At s=0 this returns `x0hat` exactly.
pub fn reverse_step_mean(
    xt: &BridgeState,
    x0hat: &ImageTensor,
    s: f64,
    schedule: &NoiseSchedule,
) -> Result<BridgeState> {
    let (mean, _) = reverse_step_core(xt, x0hat, s, schedule)?;
    BridgeState::new(mean, s)
}

/// Stochastic reverse step: posterior mean plus Gaussian noise. Supported
/// for tests and diagnostics; inference uses [`reverse_step_mean`].
pub fn reverse_step_sampled<R: Rng>(
    xt: &BridgeState,
    x0hat: &ImageTensor,
    s: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<BridgeState> {
    let (mut mean, var) = reverse_step_core(xt, x0hat, s, schedule)?;
    let sd = var.sqrt();
    for m in mean.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *m = (*m as f64 + sd * z) as f32;
    }
    BridgeState::new(mean, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f32) -> ImageTensor {
        ImageTensor::constant(1, 1, 1, v)
    }

    fn sched() -> NoiseSchedule {
        build_schedule(50, 0.3, 1e-4).unwrap()
    }

    #[test]
    fn posterior_collapses_to_endpoints() {
        let s = sched();
        let x0 = scalar(-0.4);
        let x1 = scalar(0.9);
        let (mu0, v0) = posterior_params(&x0, &x1, 0.0, &s).unwrap();
        assert_eq!(mu0.data()[0], -0.4);
        assert_eq!(v0, 0.0);
        let (mu1, v1) = posterior_params(&x0, &x1, 1.0, &s).unwrap();
        assert_eq!(mu1.data()[0], 0.9);
        assert_eq!(v1, 0.0);
    }

    #[test]
    fn posterior_equal_weights_at_symmetric_time() {
        // Triangular profile: σ_t = σ̄_t at t=0.5, so the mean of (−1, +1)
        // vanishes and var = σ_t²/2.
        let s = sched();
        let (mu, var) = posterior_params(&scalar(-1.0), &scalar(1.0), 0.5, &s).unwrap();
        assert!(mu.data()[0].abs() < 1e-7);
        let (s2f, _) = s.sigma2_at(0.5).unwrap();
        assert!((var - s2f / 2.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_rejects_shape_mismatch() {
        let s = sched();
        let x0 = ImageTensor::zeros(2, 2, 1);
        let x1 = ImageTensor::zeros(2, 3, 1);
        assert!(posterior_params(&x0, &x1, 0.3, &s).is_err());
    }

    #[test]
    fn sample_xt_exact_at_endpoints() {
        let s = sched();
        let x0 = scalar(0.25);
        let x1 = scalar(-0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let at0 = sample_xt(&x0, &x1, 0.0, &s, &mut rng).unwrap();
        assert_eq!(at0.data.data()[0], 0.25);
        let at1 = sample_xt(&x0, &x1, 1.0, &s, &mut rng).unwrap();
        assert_eq!(at1.data.data()[0], -0.75);
    }

    #[test]
    fn sample_xt_reproducible_for_fixed_seed() {
        let s = sched();
        let x0 = ImageTensor::constant(4, 4, 6, -1.0);
        let x1 = ImageTensor::constant(4, 4, 6, 1.0);
        let a = sample_xt(&x0, &x1, 0.37, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_xt(&x0, &x1, 0.37, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.data.data(), b.data.data());
    }

    #[test]
    fn target_is_zero_when_state_equals_x0() {
        let s = sched();
        let x0 = ImageTensor::constant(3, 3, 2, 0.4);
        let xt = BridgeState::new(x0.clone(), 0.5).unwrap();
        let tgt = training_target(&xt, &x0, &s).unwrap();
        assert!(tgt.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_scalar_arithmetic() {
        // Constant-β schedule makes σ_t known in closed form:
        // σ²(0.25·…) — pick t with σ_t = 0.5 via β = 1.0, t = 0.25.
        let s = build_schedule(4, 1.0, 1.0).unwrap();
        let (sf, _) = s.sigma_at(0.25).unwrap();
        assert!((sf - 0.5).abs() < 1e-12);
        let xt = BridgeState::new(scalar(0.7), 0.25).unwrap();
        let tgt = training_target(&xt, &scalar(0.2), &s).unwrap();
        assert!((tgt.data()[0] - 1.0).abs() < 1e-6);
        let back = predict_x0(&xt, &tgt, &s).unwrap();
        assert!((back.data()[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn target_rejects_degenerate_time() {
        let s = sched();
        let xt = BridgeState::new(scalar(0.1), 0.0).unwrap();
        assert!(training_target(&xt, &scalar(0.0), &s).is_err());
    }

    #[test]
    fn predict_x0_with_zero_eps_returns_state() {
        let s = sched();
        let xt = BridgeState::new(scalar(0.7), 0.6).unwrap();
        let eps = scalar(0.0);
        assert_eq!(predict_x0(&xt, &eps, &s).unwrap().data()[0], 0.7);
    }

    #[test]
    fn predict_x0_inverts_training_target() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = ImageTensor::from_fn(5, 4, 6, |_, _, _| rng.random_range(-1.0..1.0));
        let x1 = ImageTensor::from_fn(5, 4, 6, |_, _, _| rng.random_range(-1.0..1.0));
        let xt = sample_xt(&x0, &x1, 0.61, &s, &mut rng).unwrap();
        let tgt = training_target(&xt, &x0, &s).unwrap();
        let rec = predict_x0(&xt, &tgt, &s).unwrap();
        assert!(rec.max_abs_diff(&x0) <= 1e-6);
    }

    #[test]
    fn reverse_step_scalar_hand_case() {
        // σ_s² = 1, σ_t² = 3 ⇒ b² = 2; x̂₀ = 0, X_t = 3 → mean = 1.
        // A constant β = 4 schedule gives σ²(t) = 4t: s = 0.25, t = 0.75.
        let s = build_schedule(4, 4.0, 4.0).unwrap();
        assert!((s.sigma2_at(0.25).unwrap().0 - 1.0).abs() < 1e-12);
        assert!((s.sigma2_at(0.75).unwrap().0 - 3.0).abs() < 1e-12);
        let xt = BridgeState::new(scalar(3.0), 0.75).unwrap();
        let out = reverse_step_mean(&xt, &scalar(0.0), 0.25, &s).unwrap();
        assert!((out.data.data()[0] - 1.0).abs() < 1e-6);
        assert_eq!(out.t, 0.25);
    }

    #[test]
    fn reverse_step_to_zero_returns_x0hat_exactly() {
        let s = sched();
        let xt = BridgeState::new(scalar(0.9), 0.3).unwrap();
        let out = reverse_step_mean(&xt, &scalar(-0.2), 0.0, &s).unwrap();
        assert_eq!(out.data.data()[0], -0.2);
    }

    #[test]
    fn reverse_step_fixed_point_when_x0hat_equals_state() {
        let s = sched();
        let xt = BridgeState::new(scalar(0.33), 0.8).unwrap();
        let out = reverse_step_mean(&xt, &scalar(0.33), 0.5, &s).unwrap();
        assert!((out.data.data()[0] - 0.33).abs() < 1e-7);
    }

    #[test]
    fn reverse_step_rejects_bad_interval() {
        let s = sched();
        let xt = BridgeState::new(scalar(0.0), 0.5).unwrap();
        assert!(reverse_step_mean(&xt, &scalar(0.0), 0.5, &s).is_err());
        assert!(reverse_step_mean(&xt, &scalar(0.0), 0.7, &s).is_err());
    }

    #[test]
    fn reverse_steps_compose_like_a_single_step() {
        // Markov consistency of the Gaussian recursion with a fixed x̂₀.
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let xt_v: f32 = rng.random_range(-1.0..1.0);
            let hat_v: f32 = rng.random_range(-1.0..1.0);
            let mut times = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            times.sort_by(f64::total_cmp);
            let (lo, mid, hi) = (times[0], times[1], times[2]);
            if hi - mid < 1e-3 || mid - lo < 1e-3 {
                continue;
            }
            let xt = BridgeState::new(scalar(xt_v), hi).unwrap();
            let hat = scalar(hat_v);
            let two_a = reverse_step_mean(&xt, &hat, mid, &s).unwrap();
            let two_b = reverse_step_mean(&two_a, &hat, lo, &s).unwrap();
            let one = reverse_step_mean(&xt, &hat, lo, &s).unwrap();
            assert!((two_b.data.data()[0] - one.data.data()[0]).abs() < 1e-6);
        }
    }
}
