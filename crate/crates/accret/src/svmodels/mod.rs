//! Stochastic-variance models and their closed-form return densities.
//!
//! Three mean-reverting variance SDEs share the drift -gamma (v - theta) dt
//! and differ in the diffusion term:
//!
//! * MM  (multiplicative):      kappa_m * v dW
//! * HM  (Cox-Ingersoll-Ross):  kappa_h * sqrt(v) dW
//! * MHM (combined):            sqrt(kappa_m^2 v^2 + kappa_h^2 v) dW
//!
//! Units are per trading day throughout: gamma and theta per day, kappa_m
//! per sqrt(day), kappa_h in units making kappa_h^2 v a variance rate.
//! Returns follow dx = sqrt(v) dW(1) (optionally with the Ito -v/2 dt drift),
//! with W(1) independent of the variance noise W(2).

mod density;
mod fit;
mod sim;

pub use density::{
    betaprime_density, density_moments, iga_density, ks_against_cdf, mhm_return_density,
    skewed_mm_density, student_return_density, DensityMoments, MhmDensityTable, ReturnDensity,
    ReturnDensityFamily,
};
pub use fit::{
    fit_return_density, nelder_mead, FitFamily, FittedParams, NelderMeadConfig, NelderMeadResult,
    ReturnDensityFit,
};
pub use sim::{
    aggregate_windows, sample_stationary_variance, simulate_returns, simulate_variance,
    SimulatedReturns,
};

use crate::special::SpecialError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("special function: {0}")]
    Special(#[from] SpecialError),
    #[error("sample too small: need {need}, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error(
        "optimizer did not converge after {iterations} iterations \
         (best point {best:?}, objective {objective}, simplex spread {spread:e})"
    )]
    OptimizerNonConvergence {
        iterations: usize,
        best: Vec<f64>,
        objective: f64,
        spread: f64,
    },
    #[error("density evaluation failed: {0}")]
    Evaluation(String),
}

/// Which stochastic-variance SDE to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvModel {
    Mm,
    Hm,
    Mhm,
}

impl std::fmt::Display for SvModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SvModel::Mm => write!(f, "MM"),
            SvModel::Hm => write!(f, "HM"),
            SvModel::Mhm => write!(f, "MHM"),
        }
    }
}

/// Drift convention for the return SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// dx = sqrt(v) dW
    None,
    /// dx = -(v/2) dt + sqrt(v) dW (Ito convention)
    ItoHalf,
}

/// Parameters of the mean-reverting variance models.
///
/// Derived quantities are recomputed on demand so they can never go stale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvModelParams {
    /// Mean-reversion rate (1/day).
    pub gamma: f64,
    /// Stationary mean variance level (per day).
    pub theta: f64,
    /// Multiplicative noise amplitude (per sqrt(day)).
    pub kappa_m: f64,
    /// Heston noise amplitude.
    pub kappa_h: f64,
}

impl SvModelParams {
    pub fn new(gamma: f64, theta: f64, kappa_m: f64, kappa_h: f64) -> Result<Self, SvError> {
        let p = Self {
            gamma,
            theta,
            kappa_m,
            kappa_h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SvError> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(SvError::InvalidParams(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(SvError::InvalidParams(format!(
                "theta must be positive, got {}",
                self.theta
            )));
        }
        if self.kappa_m < 0.0 || self.kappa_h < 0.0 {
            return Err(SvError::InvalidParams(
                "noise amplitudes must be non-negative".into(),
            ));
        }
        if self.kappa_m == 0.0 && self.kappa_h == 0.0 {
            return Err(SvError::InvalidParams(
                "kappa_m and kappa_h cannot both be zero".into(),
            ));
        }
        Ok(())
    }

    /// alpha = 2 gamma theta / kappa_m^2 (MM inverse-gamma scale).
    pub fn alpha(&self) -> f64 {
        2.0 * self.gamma * self.theta / (self.kappa_m * self.kappa_m)
    }

    /// p = 2 gamma theta / kappa_h^2 (beta-prime shape).
    pub fn p(&self) -> f64 {
        2.0 * self.gamma * self.theta / (self.kappa_h * self.kappa_h)
    }

    /// q = 1 + 2 gamma / kappa_m^2 (beta-prime shape).
    pub fn q(&self) -> f64 {
        1.0 + 2.0 * self.gamma / (self.kappa_m * self.kappa_m)
    }

    /// beta = kappa_h^2 / kappa_m^2 (beta-prime scale).
    pub fn beta(&self) -> f64 {
        (self.kappa_h * self.kappa_h) / (self.kappa_m * self.kappa_m)
    }

    /// Whether the Feller condition 2 gamma theta >= kappa_h^2 holds (the
    /// pure Heston process then stays strictly positive).
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.gamma * self.theta >= self.kappa_h * self.kappa_h
    }

    /// Builds the MM parameter set from the paper-style pair (alpha, theta)
    /// and a chosen mean-reversion rate.
    pub fn mm_from_alpha_theta(alpha: f64, theta: f64, gamma: f64) -> Result<Self, SvError> {
        if !(alpha > 0.0) {
            return Err(SvError::InvalidParams(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let kappa_m = (2.0 * gamma * theta / alpha).sqrt();
        Self::new(gamma, theta, kappa_m, 0.0)
    }
}

/// A simulated variance path (values are clamped non-negative).
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath {
    /// Step size in days.
    pub dt: f64,
    pub values: Vec<f64>,
    pub model: SvModel,
    pub seed: u64,
    /// Number of steps whose pre-clamp state went negative.
    pub clamp_events: usize,
}

impl VariancePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validate() {
        assert!(SvModelParams::new(0.1, 1e-5, 0.1, 0.0).is_ok());
        assert!(SvModelParams::new(0.1, 1e-5, 0.0, 0.1).is_ok());
        assert!(matches!(
            SvModelParams::new(0.1, 1e-5, 0.0, 0.0),
            Err(SvError::InvalidParams(_))
        ));
        assert!(SvModelParams::new(-0.1, 1e-5, 0.1, 0.0).is_err());
        assert!(SvModelParams::new(0.1, 0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn derived_parameters_match_definitions() {
        let p = SvModelParams::new(0.2, 2e-5, 0.15, 0.003).unwrap();
        approx::assert_relative_eq!(p.alpha(), 2.0 * 0.2 * 2e-5 / (0.15 * 0.15));
        approx::assert_relative_eq!(p.p(), 2.0 * 0.2 * 2e-5 / (0.003 * 0.003));
        approx::assert_relative_eq!(p.q(), 1.0 + 2.0 * 0.2 / (0.15 * 0.15));
        approx::assert_relative_eq!(p.beta(), (0.003f64 / 0.15).powi(2));
    }

    #[test]
    fn mm_from_alpha_theta_roundtrips() {
        let alpha = 1.5e-4;
        let theta = 0.95e-5;
        let p = SvModelParams::mm_from_alpha_theta(alpha, theta, 0.05).unwrap();
        approx::assert_relative_eq!(p.alpha(), alpha, max_relative = 1e-12);
        assert_eq!(p.kappa_h, 0.0);
    }
}
