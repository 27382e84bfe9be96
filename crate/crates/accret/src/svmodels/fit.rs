//! Maximum-likelihood fitting of the closed-form return densities, built on
//! a deterministic bounded Nelder-Mead search in log-parameter space.

use super::density::{ks_against_cdf, MhmDensityTable};
use super::{SvError, SvModelParams};
use crate::diststats::central_moments;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

const LN_PI: f64 = 1.1447298858494002;

/// Nelder-Mead settings; the defaults suit smooth 2-3 parameter likelihoods.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    pub max_iter: usize,
    /// Converged when the simplex objective spread falls below this.
    pub f_tol: f64,
    /// ... or when the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            f_tol: 1e-10,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final simplex objective spread.
    pub spread: f64,
}

/// Minimizes `f` from `x0` with initial steps `step`. Fully deterministic:
/// ties in the simplex ordering are broken by insertion order.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    config: &NelderMeadConfig,
) -> NelderMeadResult {
    assert_eq!(x0.len(), step.len());
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut xi = x0.to_vec();
        xi[i] += step[i];
        let fx = f(&xi);
        simplex.push((xi, fx));
    }

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = (simplex[n].1 - simplex[0].1).abs();
        let diameter = (0..n)
            .map(|j| (simplex[n].0[j] - simplex[0].0[j]).abs())
            .fold(0.0f64, f64::max);
        if spread < config.f_tol || diameter < config.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + gamma * (centroid[j] - worst.0[j]))
                .collect();
            let f_expand = f(&expand);
            simplex[n] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = if f_reflect < worst.1 {
                (0..n)
                    .map(|j| centroid[j] + rho * (reflect[j] - centroid[j]))
                    .collect()
            } else {
                (0..n)
                    .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                    .collect()
            };
            let f_contract = f(&contract);
            if f_contract < worst.1.min(f_reflect) {
                simplex[n] = (contract, f_contract);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for (xj, bj) in v.0.iter_mut().zip(&best) {
                        *xj = bj + sigma * (*xj - bj);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let spread = (simplex[simplex.len() - 1].1 - simplex[0].1).abs();
    NelderMeadResult {
        x: simplex[0].0.clone(),
        fx: simplex[0].1,
        iterations,
        converged,
        spread,
    }
}

/// Family selector for `fit_return_density`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    StudentMm,
    Mhm,
}

/// Fitted parameters, by family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedParams {
    StudentMm { alpha: f64, theta: f64 },
    Mhm { p: f64, q: f64, beta: f64 },
}

impl FittedParams {
    /// The mean daily variance level implied by the fit.
    pub fn theta(&self) -> f64 {
        match *self {
            FittedParams::StudentMm { theta, .. } => theta,
            FittedParams::Mhm { p, q, beta } => beta * p / (q - 1.0),
        }
    }
}

/// Maximum-likelihood fit of a return sample at fixed tau.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReturnDensityFit {
    pub params: FittedParams,
    pub tau: f64,
    pub log_likelihood: f64,
    pub ks_distance: f64,
    pub iterations: usize,
}

fn student_neg_loglik(values: &[f64], a: f64, s: f64) -> f64 {
    // ln psi(z) = lnG(a+3/2) - lnG(a+1) - ln(pi)/2 - ln(2s)/2 - (a+3/2) ln(1+z^2/(2s))
    let n = values.len() as f64;
    let two_s = 2.0 * s;
    let constant = ln_gamma(a + 1.5) - ln_gamma(a + 1.0) - 0.5 * LN_PI - 0.5 * two_s.ln();
    let sum: f64 = values.iter().map(|z| (z * z / two_s).ln_1p()).sum();
    -(n * constant - (a + 1.5) * sum)
}

/// Fits (alpha, theta) of the Student family or (p, q, beta) of the MHM
/// family by maximum likelihood with tau fixed to the sample's window.
///
/// The search is a bounded Nelder-Mead in log-parameter space started from
/// theta_0 = m2/tau, so results are deterministic for a given sample.
pub fn fit_return_density(
    values: &[f64],
    tau: f64,
    family: FitFamily,
) -> Result<ReturnDensityFit, SvError> {
    if values.len() < 1000 {
        return Err(SvError::SampleTooSmall {
            need: 1000,
            got: values.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(SvError::InvalidParams(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let (_, m2, _) = central_moments(values).map_err(|e| SvError::Evaluation(e.to_string()))?;
    if !(m2 > 0.0) {
        return Err(SvError::Evaluation("sample has zero variance".into()));
    }
    let theta0 = m2 / tau;

    match family {
        FitFamily::StudentMm => fit_student(values, tau, theta0),
        FitFamily::Mhm => fit_mhm(values, tau, theta0),
    }
}

fn fit_student(values: &[f64], tau: f64, theta0: f64) -> Result<ReturnDensityFit, SvError> {
    // moment start for the shape: Student dof nu = 2a + 2, excess kurtosis 6/(nu-4)
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|z| (z - mean).powi(4)).sum::<f64>() / n;
    let excess = m4 / (m2 * m2) - 3.0;
    let a0 = if excess > 0.05 {
        (3.0 / excess + 1.0).clamp(0.2, 500.0)
    } else {
        100.0
    };
    let s0 = a0 * theta0 * tau;

    const LB: f64 = -34.5; // ln 1e-15
    const UB: f64 = 34.5;
    let objective = |x: &[f64]| -> f64 {
        if x.iter().any(|v| *v < LB || *v > UB) {
            return f64::INFINITY;
        }
        student_neg_loglik(values, x[0].exp(), x[1].exp())
    };
    let result = nelder_mead(
        objective,
        &[a0.ln(), s0.ln()],
        &[0.5, 0.5],
        &NelderMeadConfig::default(),
    );
    if !result.converged || !result.fx.is_finite() {
        return Err(SvError::OptimizerNonConvergence {
            iterations: result.iterations,
            best: result.x,
            objective: result.fx,
            spread: result.spread,
        });
    }
    let a = result.x[0].exp();
    let s = result.x[1].exp();
    let alpha = s / tau;
    let theta = alpha / a;

    // KS against the fitted law via the Student-t representation:
    // z / sqrt(s/(a+1)) ~ t with 2a+2 degrees of freedom
    let nu = 2.0 * a + 2.0;
    let lambda = (s / (a + 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, nu)
        .map_err(|e| SvError::Evaluation(format!("fitted Student CDF: {e}")))?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks = ks_against_cdf(&sorted, |z| t.cdf(z / lambda));

    Ok(ReturnDensityFit {
        params: FittedParams::StudentMm { alpha, theta },
        tau,
        log_likelihood: -result.fx,
        ks_distance: ks,
        iterations: result.iterations,
    })
}

fn fit_mhm(values: &[f64], tau: f64, theta0: f64) -> Result<ReturnDensityFit, SvError> {
    let z_max = values.iter().fold(0.0f64, |m, z| m.max(z.abs())) * 1.05;
    let table_points = 2048usize;

    // parameters: (ln p, ln(q-1), ln beta); q > 1 by construction
    let neg_loglik = |x: &[f64]| -> f64 {
        if x.iter().any(|v| v.abs() > 30.0) {
            return f64::INFINITY;
        }
        let p = x[0].exp();
        let q = 1.0 + x[1].exp();
        let beta = x[2].exp();
        let params = match SvModelParams::new(
            1.0,
            beta * p / (q - 1.0),
            (2.0 / (q - 1.0)).sqrt(),
            (2.0 * beta / (q - 1.0)).sqrt(),
        ) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        debug_assert!((params.p() - p).abs() / p < 1e-9);
        let table = match MhmDensityTable::new(&params, tau, z_max, table_points) {
            Ok(t) => t,
            Err(_) => return f64::INFINITY,
        };
        let ll: f64 = values.iter().map(|&z| table.ln_density(z)).sum();
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };

    let p0 = 2.0f64;
    let q0 = 3.0f64;
    let beta0 = theta0 * (q0 - 1.0) / p0;
    let config = NelderMeadConfig {
        max_iter: 400,
        f_tol: 1e-8,
        x_tol: 1e-8,
    };
    let result = nelder_mead(
        neg_loglik,
        &[p0.ln(), (q0 - 1.0).ln(), beta0.ln()],
        &[0.4, 0.4, 0.4],
        &config,
    );
    if !result.converged || !result.fx.is_finite() {
        return Err(SvError::OptimizerNonConvergence {
            iterations: result.iterations,
            best: result.x,
            objective: result.fx,
            spread: result.spread,
        });
    }
    let p = result.x[0].exp();
    let q = 1.0 + result.x[1].exp();
    let beta = result.x[2].exp();

    let params = SvModelParams::new(
        1.0,
        beta * p / (q - 1.0),
        (2.0 / (q - 1.0)).sqrt(),
        (2.0 * beta / (q - 1.0)).sqrt(),
    )?;
    let table = MhmDensityTable::new(&params, tau, z_max, table_points)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks = ks_against_cdf(&sorted, |z| table.cdf(z));

    Ok(ReturnDensityFit {
        params: FittedParams::Mhm { p, q, beta },
        tau,
        log_likelihood: -result.fx,
        ks_distance: ks,
        iterations: result.iterations,
    })
}
