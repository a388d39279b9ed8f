//! Symmetric noise schedule and its integrated variances.
//!
//! The noise rate β(t) ramps linearly from `beta_min` at t=0 up to
//! `beta_max` at t=0.5 and back down to `beta_min` at t=1. Because β is
//! piecewise linear, the accumulated variances
//!
//! ```text
//! σ_t²  = ∫₀ᵗ β dτ          σ̄_t² = ∫ᵗ¹ β dτ
//! ```
//!
//! have closed forms (piecewise quadratic), so the grid values carry no
//! quadrature error at all. Between grid points the accessors interpolate
//! the variance accumulators linearly.

use crate::error::{Error, Result};

/// Discretized symmetric noise schedule with precomputed variance
/// accumulators at every grid point.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    n_steps: usize,
    t_grid: Vec<f64>,
    beta: Vec<f64>,
    sigma2_fwd: Vec<f64>,
    sigma2_bwd: Vec<f64>,
    total_variance: f64,
    beta_min: f64,
    beta_max: f64,
}

/// Builds the triangular schedule with `n_steps` reverse steps.
///
/// `beta` holds the noise rate sampled at interval midpoints; the variance
/// accumulators are exact integrals of the underlying triangular profile.
pub fn build_schedule(n_steps: usize, beta_max: f64, beta_min: f64) -> Result<NoiseSchedule> {
    if n_steps < 2 {
        return Err(Error::config(
            "schedule.n_steps",
            format!("must be at least 2, got {n_steps}"),
        ));
    }
    if !beta_max.is_finite() || beta_max <= 0.0 {
        return Err(Error::config(
            "schedule.beta_max",
            format!("must be a positive finite real, got {beta_max}"),
        ));
    }
    if !beta_min.is_finite() || beta_min < 0.0 {
        return Err(Error::config(
            "schedule.beta_min",
            format!("must be a non-negative finite real, got {beta_min}"),
        ));
    }
    if beta_min > beta_max {
        return Err(Error::config(
            "schedule.beta_min",
            format!("must not exceed beta_max ({beta_min} > {beta_max})"),
        ));
    }

    let n = n_steps;
    let t_grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let beta: Vec<f64> = (0..n)
        .map(|i| beta_profile(0.5 * (t_grid[i] + t_grid[i + 1]), beta_min, beta_max))
        .collect();
    let total_variance = 0.5 * (beta_min + beta_max);
    let sigma2_fwd: Vec<f64> = t_grid
        .iter()
        .map(|&t| integral_from_zero(t, beta_min, beta_max, total_variance))
        .collect();
    let sigma2_bwd: Vec<f64> = sigma2_fwd.iter().map(|&f| total_variance - f).collect();

    Ok(NoiseSchedule {
        n_steps: n,
        t_grid,
        beta,
        sigma2_fwd,
        sigma2_bwd,
        total_variance,
        beta_min,
        beta_max,
    })
}

/// Triangular noise rate at time `t`.
fn beta_profile(t: f64, beta_min: f64, beta_max: f64) -> f64 {
    let ramp = if t <= 0.5 { 2.0 * t } else { 2.0 * (1.0 - t) };
    beta_min + (beta_max - beta_min) * ramp
}

/// Exact ∫₀ᵗ β dτ for the triangular profile.
///
/// For t ≤ 0.5 the integral is `beta_min·t + (beta_max−beta_min)·t²`; above
/// 0.5 it is evaluated by reflection so that the fwd/bwd symmetry of the
/// profile holds to the last bit.
fn integral_from_zero(t: f64, beta_min: f64, beta_max: f64, total: f64) -> f64 {
    let half = |u: f64| beta_min * u + (beta_max - beta_min) * u * u;
    if t <= 0.5 {
        half(t)
    } else {
        total - half(1.0 - t)
    }
}

impl NoiseSchedule {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Monotone grid of n_steps+1 time values with t_grid[0]=0, t_grid[n]=1.
    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    /// Per-interval noise rate, sampled at interval midpoints.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// σ_1² = σ̄_0² = ∫₀¹ β dτ.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Forward variance accumulator σ_t² at grid point `i`.
    pub fn sigma2_fwd_at_grid(&self, i: usize) -> f64 {
        self.sigma2_fwd[i]
    }

    /// Backward variance accumulator σ̄_t² at grid point `i`.
    pub fn sigma2_bwd_at_grid(&self, i: usize) -> f64 {
        self.sigma2_bwd[i]
    }

    /// (σ_t², σ̄_t²) with the forward accumulator interpolated linearly
    /// between grid points and the backward one taken as its exact
    /// complement, so the pair always sums to the total variance.
    pub fn sigma2_at(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        let n = self.n_steps;
        let i = ((t * n as f64).floor() as usize).min(n - 1);
        let t0 = self.t_grid[i];
        let t1 = self.t_grid[i + 1];
        let alpha = (t - t0) / (t1 - t0);
        let fwd = self.sigma2_fwd[i] + alpha * (self.sigma2_fwd[i + 1] - self.sigma2_fwd[i]);
        let bwd = (self.total_variance - fwd).max(0.0);
        Ok((fwd, bwd))
    }

    /// (σ_t, σ̄_t): square roots of the interpolated variance accumulators.
    pub fn sigma_at(&self, t: f64) -> Result<(f64, f64)> {
        let (f, b) = self.sigma2_at(t)?;
        Ok((f.sqrt(), b.sqrt()))
    }
}
