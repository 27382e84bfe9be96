//! Euler-Maruyama integration of the variance SDEs and return generation.
//!
//! The scheme is full truncation: the drift and diffusion are evaluated at
//! max(v, 0), so negative excursions of the auxiliary state decay back
//! deterministically; stored path values are clamped non-negative and every
//! clamp is counted.

use super::{DriftMode, SvError, SvModel, SvModelParams, VariancePath};
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};

fn diffusion(model: SvModel, params: &SvModelParams, v_pos: f64) -> f64 {
    match model {
        SvModel::Mm => params.kappa_m * v_pos,
        SvModel::Hm => params.kappa_h * v_pos.sqrt(),
        SvModel::Mhm => {
            let km2 = params.kappa_m * params.kappa_m;
            let kh2 = params.kappa_h * params.kappa_h;
            (km2 * v_pos * v_pos + kh2 * v_pos).sqrt()
        }
    }
}

fn check_model_params(model: SvModel, params: &SvModelParams) -> Result<(), SvError> {
    params.validate()?;
    let need_km = matches!(model, SvModel::Mm);
    let need_kh = matches!(model, SvModel::Hm);
    if need_km && params.kappa_m == 0.0 {
        return Err(SvError::InvalidParams("MM requires kappa_m > 0".into()));
    }
    if need_kh && params.kappa_h == 0.0 {
        return Err(SvError::InvalidParams("HM requires kappa_h > 0".into()));
    }
    Ok(())
}

/// Integrates the variance SDE for `n_steps` steps of size `dt` from `v0`.
///
/// `values[0] = v0`; the path is deterministic for a fixed seed.
pub fn simulate_variance(
    params: &SvModelParams,
    model: SvModel,
    dt: f64,
    n_steps: usize,
    v0: f64,
    seed: u64,
) -> Result<VariancePath, SvError> {
    check_model_params(model, params)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SvError::InvalidParams(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(SvError::InvalidParams(format!(
            "v0 must be positive, got {v0}"
        )));
    }
    if n_steps == 0 {
        return Err(SvError::InvalidParams("n_steps must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, "variance-path", 0);
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(n_steps);
    let mut clamp_events = 0usize;
    let mut v = v0;
    values.push(v0);
    for _ in 1..n_steps {
        let v_pos = v.max(0.0);
        let z: f64 = StandardNormal.sample(&mut rng);
        v += -params.gamma * (v_pos - params.theta) * dt
            + diffusion(model, params, v_pos) * sqrt_dt * z;
        if v < 0.0 {
            clamp_events += 1;
        }
        values.push(v.max(0.0));
    }
    Ok(VariancePath {
        dt,
        values,
        model,
        seed,
        clamp_events,
    })
}

/// Draws of the stationary variance law, taken from one long path after a
/// burn-in and thinned to `spacing_steps` between samples.
pub fn sample_stationary_variance(
    params: &SvModelParams,
    model: SvModel,
    dt: f64,
    n_samples: usize,
    spacing_steps: usize,
    burn_in_steps: usize,
    seed: u64,
) -> Result<Vec<f64>, SvError> {
    let spacing = spacing_steps.max(1);
    let total = burn_in_steps + n_samples * spacing + 1;
    let path = simulate_variance(params, model, dt, total, params.theta, seed)?;
    Ok(path
        .values
        .iter()
        .skip(burn_in_steps)
        .step_by(spacing)
        .take(n_samples)
        .copied()
        .collect())
}

/// Per-step returns generated on top of a variance path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedReturns {
    /// Step size in days (the variance path's dt).
    pub dt: f64,
    pub values: Vec<f64>,
    pub drift_mode: DriftMode,
}

/// Generates one return per path step: dx = sqrt(v dt) xi, minus (v/2) dt
/// under the Ito convention, minus `drift_offset * dt` when a phenomenological
/// re-centering is requested. The return noise stream is independent of the
/// variance noise.
pub fn simulate_returns(
    path: &VariancePath,
    drift_mode: DriftMode,
    drift_offset: f64,
    seed: u64,
) -> SimulatedReturns {
    let mut rng = stream_rng(seed, "return-noise", 1);
    let sqrt_dt = path.dt.sqrt();
    let values = path
        .values
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let diffusion = v.sqrt() * sqrt_dt * z;
            let drift = match drift_mode {
                DriftMode::None => 0.0,
                DriftMode::ItoHalf => -0.5 * v * path.dt,
            };
            drift - drift_offset * path.dt + diffusion
        })
        .collect();
    SimulatedReturns {
        dt: path.dt,
        values,
        drift_mode,
    }
}

/// Sliding-window sums over `window` consecutive values (the tau-day
/// accumulation of per-day returns).
pub fn aggregate_windows(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    assert!(values.len() >= window, "window larger than series");
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc);
    for t in window..values.len() {
        acc += values[t] - values[t - window];
        out.push(acc);
    }
    out
}
