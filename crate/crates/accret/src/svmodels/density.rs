//! Steady-state variance densities and closed-form return densities.
//!
//! The MM model's stationary variance is inverse-gamma; the MHM model's is
//! beta-prime. Mixing a zero-mean Gaussian over the stationary variance
//! scaled by the accumulation window tau gives the return densities: a
//! Student form for MM, a confluent-hypergeometric form for MHM, and a
//! Bessel-K form with an exp(-z/2) tilt for MM under the Ito drift (the
//! skewed variant). Everything is evaluated in log space.

use super::{SvError, SvModelParams};
use crate::quad::{integrate_half_line, integrate_real_line};
use crate::special::{ln_bessel_k, ln_hyper_u, SpecialError};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

const LN_PI: f64 = 1.1447298858494002; // ln(pi)
const LN_UNDERFLOW: f64 = -745.0;
const LN_OVERFLOW: f64 = 709.0;

fn require_positive_v(v: f64) -> Result<(), SvError> {
    if !(v > 0.0) || !v.is_finite() {
        Err(SvError::InvalidParams(format!(
            "density requires v > 0, got {v}"
        )))
    } else {
        Ok(())
    }
}

fn require_positive_tau(tau: f64) -> Result<(), SvError> {
    if !(tau > 0.0) || !tau.is_finite() {
        Err(SvError::InvalidParams(format!(
            "tau must be positive, got {tau}"
        )))
    } else {
        Ok(())
    }
}

/// Stationary variance density of the MM model: inverse-gamma with shape
/// alpha/theta + 1 and scale alpha.
pub fn iga_density(v: f64, params: &SvModelParams) -> Result<f64, SvError> {
    require_positive_v(v)?;
    params.validate()?;
    if params.kappa_m == 0.0 {
        return Err(SvError::InvalidParams(
            "inverse-gamma stationary law needs kappa_m > 0".into(),
        ));
    }
    let alpha = params.alpha();
    let shape = alpha / params.theta + 1.0;
    let ln_f = shape * alpha.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - alpha / v;
    Ok(if ln_f < LN_UNDERFLOW { 0.0 } else { ln_f.exp() })
}

/// Stationary variance density of the MHM model: beta-prime with shapes
/// (p, q) and scale beta.
pub fn betaprime_density(v: f64, params: &SvModelParams) -> Result<f64, SvError> {
    require_positive_v(v)?;
    params.validate()?;
    if params.kappa_m == 0.0 || params.kappa_h == 0.0 {
        return Err(SvError::InvalidParams(
            "beta-prime stationary law needs kappa_m > 0 and kappa_h > 0".into(),
        ));
    }
    let (p, q, beta) = (params.p(), params.q(), params.beta());
    let t = v / beta;
    let ln_f = (p - 1.0) * t.ln() - (p + q) * t.ln_1p() - beta.ln() - ln_beta(p, q);
    Ok(if ln_f < LN_UNDERFLOW { 0.0 } else { ln_f.exp() })
}

fn ln_student_density(z: f64, alpha: f64, theta: f64, tau: f64) -> f64 {
    let a = alpha / theta;
    let two_alpha_tau = 2.0 * alpha * tau;
    ln_gamma(a + 1.5)
        - ln_gamma(a + 1.0)
        - 0.5 * LN_PI
        - 0.5 * two_alpha_tau.ln()
        - (a + 1.5) * (z * z / two_alpha_tau).ln_1p()
}

/// Symmetric Student-form return density of the MM model.
pub fn student_return_density(z: f64, params: &SvModelParams, tau: f64) -> Result<f64, SvError> {
    require_positive_tau(tau)?;
    params.validate()?;
    if params.kappa_m == 0.0 {
        return Err(SvError::InvalidParams(
            "the Student return density needs kappa_m > 0".into(),
        ));
    }
    let ln_f = ln_student_density(z, params.alpha(), params.theta, tau);
    Ok(if ln_f < LN_UNDERFLOW { 0.0 } else { ln_f.exp() })
}

fn ln_mhm_density(z: f64, p: f64, q: f64, beta: f64, tau: f64) -> Result<f64, SvError> {
    let two_beta_tau = 2.0 * beta * tau;
    let x = z * z / two_beta_tau;
    let ln_u = ln_hyper_u(q + 0.5, 1.5 - p, x).map_err(|e| match e {
        SpecialError::Domain(_) => SvError::Evaluation(format!(
            "MHM density diverges at z = {z} for p = {p} <= 1/2"
        )),
        other => SvError::Special(other),
    })?;
    Ok(ln_gamma(q + 0.5) + ln_u - 0.5 * (std::f64::consts::PI * two_beta_tau).ln() - ln_beta(p, q))
}

/// Symmetric return density of the MHM model (confluent hypergeometric form).
pub fn mhm_return_density(z: f64, params: &SvModelParams, tau: f64) -> Result<f64, SvError> {
    require_positive_tau(tau)?;
    params.validate()?;
    if params.kappa_m == 0.0 || params.kappa_h == 0.0 {
        return Err(SvError::InvalidParams(
            "the MHM return density needs kappa_m > 0 and kappa_h > 0".into(),
        ));
    }
    let ln_f = ln_mhm_density(z, params.p(), params.q(), params.beta(), tau)?;
    if ln_f > LN_OVERFLOW {
        return Err(SvError::Evaluation(format!(
            "MHM density overflows at z = {z}"
        )));
    }
    Ok(if ln_f < LN_UNDERFLOW { 0.0 } else { ln_f.exp() })
}

fn ln_skewed_mm_density(z: f64, alpha: f64, theta: f64, tau: f64) -> Result<f64, SvError> {
    let a = alpha / theta;
    let two_alpha_tau = 2.0 * alpha * tau;
    let order = a + 1.5;
    // W = sqrt(1 + z^2/(2 alpha tau)); Bessel argument is sqrt(z^2 + 2 alpha tau)/2
    let ln_w = 0.5 * (z * z / two_alpha_tau).ln_1p();
    let arg = 0.5 * z.hypot(two_alpha_tau.sqrt());
    let ln_k = ln_bessel_k(order, arg)?;
    Ok(
        -2.0 * (a + 1.0) * std::f64::consts::LN_2 - 0.5 * LN_PI - ln_gamma(a + 1.0)
            + (a + 0.5) * 0.5 * two_alpha_tau.ln()
            - order * ln_w
            + ln_k
            - 0.5 * z,
    )
}

/// Skewed return density of the MM model under the Ito drift convention:
/// Bessel-K form with an exp(-z/2) tilt toward losses.
pub fn skewed_mm_density(z: f64, params: &SvModelParams, tau: f64) -> Result<f64, SvError> {
    require_positive_tau(tau)?;
    params.validate()?;
    if params.kappa_m == 0.0 {
        return Err(SvError::InvalidParams(
            "the skewed return density needs kappa_m > 0".into(),
        ));
    }
    let ln_f = ln_skewed_mm_density(z, params.alpha(), params.theta, tau)?;
    if ln_f > LN_OVERFLOW {
        return Err(SvError::Evaluation(format!(
            "skewed density overflows at z = {z}"
        )));
    }
    Ok(if ln_f < LN_UNDERFLOW { 0.0 } else { ln_f.exp() })
}

/// The three closed-form return-density families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnDensityFamily {
    StudentMm,
    Mhm,
    SkewedMm,
}

/// A return density: family, parameters, and accumulation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnDensity {
    pub family: ReturnDensityFamily,
    pub params: SvModelParams,
    pub tau: f64,
}

impl ReturnDensity {
    pub fn new(
        family: ReturnDensityFamily,
        params: SvModelParams,
        tau: f64,
    ) -> Result<Self, SvError> {
        require_positive_tau(tau)?;
        params.validate()?;
        Ok(Self {
            family,
            params,
            tau,
        })
    }

    /// Density at `z`; underflow maps to 0, divergence and overflow to errors.
    pub fn evaluate(&self, z: f64) -> Result<f64, SvError> {
        match self.family {
            ReturnDensityFamily::StudentMm => student_return_density(z, &self.params, self.tau),
            ReturnDensityFamily::Mhm => mhm_return_density(z, &self.params, self.tau),
            ReturnDensityFamily::SkewedMm => skewed_mm_density(z, &self.params, self.tau),
        }
    }
}

/// Numerical moments of a return density from adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMoments {
    pub norm: f64,
    pub mean: f64,
    pub variance: f64,
    pub third_central: f64,
    pub zeta: f64,
}

/// Integrates the density and its first three moments over the real line.
pub fn density_moments(density: &ReturnDensity, rel_tol: f64) -> Result<DensityMoments, SvError> {
    // probe for evaluation errors before handing the closure to the integrator
    let scale = (density.params.theta * density.tau).sqrt();
    for &z in &[-3.0 * scale, 0.0, 3.0 * scale] {
        match density.evaluate(z) {
            Ok(_) => {}
            Err(SvError::Evaluation(e)) if z == 0.0 => {
                return Err(SvError::Evaluation(e)); // integrable divergence unsupported here
            }
            Err(e) => return Err(e),
        }
    }
    let f = |z: f64| density.evaluate(z).unwrap_or(f64::NAN);
    let moment = |k: u32| -> f64 {
        integrate_real_line(|z| z.powi(k as i32) * f(z), 3.0 * scale, rel_tol).value
    };
    let norm = moment(0);
    let raw1 = integrate_half_line(|z| z * f(z), 3.0 * scale, rel_tol).value
        - integrate_half_line(|z| z * f(-z), 3.0 * scale, rel_tol).value;
    let raw2 = moment(2);
    let raw3 = integrate_half_line(|z| z.powi(3) * f(z), 3.0 * scale, rel_tol).value
        - integrate_half_line(|z| z.powi(3) * f(-z), 3.0 * scale, rel_tol).value;
    if !(norm.is_finite() && raw1.is_finite() && raw2.is_finite() && raw3.is_finite()) {
        return Err(SvError::Evaluation(
            "moment quadrature produced non-finite values".into(),
        ));
    }
    let mean = raw1 / norm;
    let variance = raw2 / norm - mean * mean;
    let third_central = raw3 / norm - 3.0 * mean * (raw2 / norm) + 2.0 * mean.powi(3);
    Ok(DensityMoments {
        norm,
        mean,
        variance,
        third_central,
        zeta: third_central / variance.powf(1.5),
    })
}

/// Tabulated MHM density on a |z| grid with linear interpolation of the
/// log-density and a power-law extension beyond the grid. Used where the
/// per-point hypergeometric quadrature would be too slow (likelihoods, KS).
#[derive(Debug, Clone)]
pub struct MhmDensityTable {
    z_grid: Vec<f64>,
    ln_density: Vec<f64>,
    /// Cumulative integral from 0 to each grid point.
    cumulative: Vec<f64>,
    /// Beyond-grid anchors at geometric spacing: (ln z, ln density).
    ext_ln_z: Vec<f64>,
    ext_ln_f: Vec<f64>,
    /// One-sided mass accumulated from z_max up to each extension anchor.
    ext_mass: Vec<f64>,
    /// Power-law exponent past the last anchor (capped at 2q + 1).
    final_exponent: f64,
}

/// Geometric ratio between beyond-grid anchors.
const EXT_RATIO: f64 = 1.25;
const EXT_ANCHORS: usize = 8;

impl MhmDensityTable {
    pub fn new(
        params: &SvModelParams,
        tau: f64,
        z_max: f64,
        n_points: usize,
    ) -> Result<Self, SvError> {
        assert!(n_points >= 16, "table needs at least 16 points");
        assert!(z_max > 0.0, "z_max must be positive");
        let (p, q, beta) = (params.p(), params.q(), params.beta());
        let mut z_grid = Vec::with_capacity(n_points);
        let mut ln_density = Vec::with_capacity(n_points);
        for i in 0..n_points {
            let z = z_max * i as f64 / (n_points - 1) as f64;
            // keep strictly away from the possible z = 0 divergence
            let z_eval = if i == 0 { z_max * 1e-8 } else { z };
            z_grid.push(z);
            ln_density.push(ln_mhm_density(z_eval, p, q, beta, tau)?);
        }
        let mut cumulative = Vec::with_capacity(n_points);
        cumulative.push(0.0);
        for i in 1..n_points {
            let h = z_grid[i] - z_grid[i - 1];
            let seg = 0.5 * h * (ln_density[i - 1].exp() + ln_density[i].exp());
            let prev = cumulative[i - 1];
            cumulative.push(prev + seg);
        }

        // piecewise power-law extension anchored on true evaluations
        let mut ext_ln_z = vec![z_max.ln()];
        let mut ext_ln_f = vec![ln_density[n_points - 1]];
        for i in 1..=EXT_ANCHORS {
            let z = z_max * EXT_RATIO.powi(i as i32);
            ext_ln_z.push(z.ln());
            ext_ln_f.push(ln_mhm_density(z, p, q, beta, tau)?);
        }
        let last = ext_ln_f.len() - 1;
        let final_exponent = ((ext_ln_f[last - 1] - ext_ln_f[last])
            / (ext_ln_z[last] - ext_ln_z[last - 1]))
            .clamp(1.5, 2.0 * q + 1.0);
        // exact integral of each power-law segment
        let mut ext_mass = vec![0.0f64];
        for i in 1..ext_ln_z.len() {
            let s = (ext_ln_f[i - 1] - ext_ln_f[i]) / (ext_ln_z[i] - ext_ln_z[i - 1]);
            let z0 = ext_ln_z[i - 1].exp();
            let f0 = ext_ln_f[i - 1].exp();
            let ratio = (ext_ln_z[i] - ext_ln_z[i - 1]).exp();
            let seg = if (s - 1.0).abs() > 1e-9 {
                f0 * z0 / (s - 1.0) * (1.0 - ratio.powf(1.0 - s))
            } else {
                f0 * z0 * (ext_ln_z[i] - ext_ln_z[i - 1])
            };
            let prev = ext_mass[i - 1];
            ext_mass.push(prev + seg);
        }
        Ok(Self {
            z_grid,
            ln_density,
            cumulative,
            ext_ln_z,
            ext_ln_f,
            ext_mass,
            final_exponent,
        })
    }

    pub fn z_max(&self) -> f64 {
        *self.z_grid.last().unwrap()
    }

    /// Log-density at z (symmetric in z).
    pub fn ln_density(&self, z: f64) -> f64 {
        let az = z.abs();
        let n = self.z_grid.len();
        let zm = self.z_max();
        if az >= zm {
            let ln_az = az.ln();
            let last = self.ext_ln_z.len() - 1;
            if ln_az >= self.ext_ln_z[last] {
                return self.ext_ln_f[last] - self.final_exponent * (ln_az - self.ext_ln_z[last]);
            }
            let pos = (ln_az - self.ext_ln_z[0]) / EXT_RATIO.ln();
            let i = (pos as usize).min(last - 1);
            let frac = (ln_az - self.ext_ln_z[i]) / (self.ext_ln_z[i + 1] - self.ext_ln_z[i]);
            return self.ext_ln_f[i] * (1.0 - frac) + self.ext_ln_f[i + 1] * frac;
        }
        let step = zm / (n - 1) as f64;
        let i = ((az / step) as usize).min(n - 2);
        let frac = (az - self.z_grid[i]) / step;
        self.ln_density[i] * (1.0 - frac) + self.ln_density[i + 1] * frac
    }

    pub fn density(&self, z: f64) -> f64 {
        let ln_f = self.ln_density(z);
        if ln_f < LN_UNDERFLOW {
            0.0
        } else {
            ln_f.exp()
        }
    }

    /// One-sided mass between z_max and az >= z_max.
    fn ext_mass_to(&self, az: f64) -> f64 {
        let ln_az = az.ln();
        let last = self.ext_ln_z.len() - 1;
        if ln_az >= self.ext_ln_z[last] {
            // remaining analytic tail beyond the last anchor
            let f_last = self.ext_ln_f[last].exp();
            let z_last = self.ext_ln_z[last].exp();
            let s = self.final_exponent;
            let full = f_last * z_last / (s - 1.0);
            let beyond = self.density(az) * az / (s - 1.0);
            return self.ext_mass[last] + full - beyond;
        }
        let pos = (ln_az - self.ext_ln_z[0]) / EXT_RATIO.ln();
        let i = (pos as usize).min(last - 1);
        let s =
            (self.ext_ln_f[i] - self.ext_ln_f[i + 1]) / (self.ext_ln_z[i + 1] - self.ext_ln_z[i]);
        let z0 = self.ext_ln_z[i].exp();
        let f0 = self.ext_ln_f[i].exp();
        let seg = if (s - 1.0).abs() > 1e-9 {
            f0 * z0 / (s - 1.0) * (1.0 - (az / z0).powf(1.0 - s))
        } else {
            f0 * z0 * (az / z0).ln()
        };
        self.ext_mass[i] + seg
    }

    /// CDF anchored at F(0) = 1/2, with the piecewise power-law tail beyond
    /// the grid.
    pub fn cdf(&self, z: f64) -> f64 {
        let az = z.abs();
        let half_mass = if az >= self.z_max() {
            self.cumulative.last().unwrap() + self.ext_mass_to(az)
        } else {
            let n = self.z_grid.len();
            let step = self.z_max() / (n - 1) as f64;
            let i = ((az / step) as usize).min(n - 2);
            let frac = (az - self.z_grid[i]) / step;
            self.cumulative[i] * (1.0 - frac) + self.cumulative[i + 1] * frac
        };
        if z >= 0.0 {
            0.5 + half_mass
        } else {
            0.5 - half_mass
        }
    }
}

/// Two-sided Kolmogorov-Smirnov distance of a sorted sample against a CDF.
pub fn ks_against_cdf(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let fx = cdf(x);
        d = d.max((fx - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - fx).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Beta as BetaDist, Continuous, InverseGamma};

    fn mm_params() -> SvModelParams {
        SvModelParams::mm_from_alpha_theta(1.5e-4, 0.95e-5, 0.1).unwrap()
    }

    fn mhm_params() -> SvModelParams {
        // p ~ 4.2, q ~ 9, beta ~ theta/2: comfortably inside every domain
        SvModelParams::new(0.2, 1.0e-5, 0.224, 1.38e-3).unwrap()
    }

    #[test]
    fn iga_normalizes_and_has_mean_theta() {
        let p = mm_params();
        let norm = integrate_half_line(|v| iga_density(v, &p).unwrap(), p.theta, 1e-12);
        assert_relative_eq!(norm.value, 1.0, epsilon = 1e-8);
        let mean = integrate_half_line(|v| v * iga_density(v, &p).unwrap(), p.theta, 1e-12);
        assert_relative_eq!(mean.value, p.theta, max_relative = 1e-7);
    }

    #[test]
    fn iga_matches_statrs_inverse_gamma() {
        let p = mm_params();
        let shape = p.alpha() / p.theta + 1.0;
        let oracle = InverseGamma::new(shape, p.alpha()).unwrap();
        for &v in &[p.theta * 0.3, p.theta, p.theta * 3.0] {
            assert_relative_eq!(
                iga_density(v, &p).unwrap(),
                oracle.pdf(v),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn betaprime_normalizes_and_matches_beta_transform() {
        let p = mhm_params();
        let norm = integrate_half_line(|v| betaprime_density(v, &p).unwrap(), p.theta, 1e-12);
        assert_relative_eq!(norm.value, 1.0, epsilon = 1e-8);
        // X = V/(V+beta) ~ Beta(p, q): f_V(v) = f_X(x) beta/(v+beta)^2
        let (pp, qq, beta) = (p.p(), p.q(), p.beta());
        let oracle = BetaDist::new(pp, qq).unwrap();
        for &v in &[beta * 0.2, beta, beta * 4.0, p.theta] {
            let x = v / (v + beta);
            let expect = oracle.pdf(x) * beta / ((v + beta) * (v + beta));
            assert_relative_eq!(
                betaprime_density(v, &p).unwrap(),
                expect,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn betaprime_mean_is_theta() {
        let p = mhm_params();
        let mean = integrate_half_line(|v| v * betaprime_density(v, &p).unwrap(), p.theta, 1e-12);
        assert_relative_eq!(mean.value, p.theta, max_relative = 1e-7);
    }

    #[test]
    fn betaprime_approaches_inverse_gamma_as_kappa_h_vanishes() {
        // leading deviation is q*beta/v, with q ~ alpha/theta ~ 17 here, so
        // beta must sit ~1e5 below the examined v-range for a 1e-3 match
        let gamma = 0.1;
        let theta = 1.0e-5;
        let kappa_m = (2.0f64 * gamma * theta / 1.5e-4).sqrt();
        let kappa_h = (kappa_m * kappa_m * theta * 1e-5).sqrt();
        let p = SvModelParams::new(gamma, theta, kappa_m, kappa_h).unwrap();
        for &v in &[theta * 0.5, theta, theta * 2.0] {
            let bp = betaprime_density(v, &p).unwrap();
            let ig = iga_density(v, &p).unwrap();
            assert_relative_eq!(bp, ig, max_relative = 1e-3);
        }
    }

    #[test]
    fn non_positive_v_rejected() {
        let p = mm_params();
        assert!(iga_density(0.0, &p).is_err());
        assert!(iga_density(-1.0, &p).is_err());
        assert!(betaprime_density(0.0, &mhm_params()).is_err());
    }

    #[test]
    fn student_density_is_even_and_normalized() {
        let p = mm_params();
        let tau = 20.0;
        for &z in &[1e-4, 3e-3, 0.05, 1.0] {
            assert_eq!(
                student_return_density(z, &p, tau).unwrap(),
                student_return_density(-z, &p, tau).unwrap()
            );
        }
        let d = ReturnDensity::new(ReturnDensityFamily::StudentMm, p, tau).unwrap();
        let m = density_moments(&d, 1e-10).unwrap();
        assert_relative_eq!(m.norm, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn student_variance_is_theta_tau() {
        let p = mm_params();
        for &tau in &[1.0, 20.0] {
            let d = ReturnDensity::new(ReturnDensityFamily::StudentMm, p, tau).unwrap();
            let m = density_moments(&d, 1e-10).unwrap();
            assert_relative_eq!(m.variance, p.theta * tau, max_relative = 1e-4);
            assert!(m.zeta.abs() < 1e-6, "zeta = {}", m.zeta);
        }
    }

    #[test]
    fn student_tail_slope_matches_exponent() {
        let p = mm_params();
        let tau = 20.0;
        let a = p.alpha() / p.theta;
        let scale = (2.0 * p.alpha() * tau).sqrt();
        let z1 = 1000.0 * scale;
        let z2 = 2000.0 * scale;
        let l1 = student_return_density(z1, &p, tau).unwrap().ln();
        let l2 = student_return_density(z2, &p, tau).unwrap().ln();
        let slope = (l2 - l1) / (z2.ln() - z1.ln());
        assert_relative_eq!(slope, -(2.0 * a + 3.0), max_relative = 1e-3);
    }

    #[test]
    fn mhm_density_is_even_normalized_with_variance_theta_tau() {
        let p = mhm_params();
        let tau = 5.0;
        for &z in &[1e-4, 2e-3, 0.03] {
            let a = mhm_return_density(z, &p, tau).unwrap();
            let b = mhm_return_density(-z, &p, tau).unwrap();
            assert_eq!(a, b);
        }
        let d = ReturnDensity::new(ReturnDensityFamily::Mhm, p, tau).unwrap();
        let m = density_moments(&d, 1e-9).unwrap();
        assert_relative_eq!(m.norm, 1.0, epsilon = 1e-6);
        assert_relative_eq!(m.variance, p.theta * tau, max_relative = 1e-3);
        assert!(m.zeta.abs() < 1e-6);
    }

    #[test]
    fn skewed_density_normalizes_and_tilts_left() {
        let p = mm_params();
        let tau = 20.0;
        let d = ReturnDensity::new(ReturnDensityFamily::SkewedMm, p, tau).unwrap();
        let m = density_moments(&d, 1e-10).unwrap();
        assert_relative_eq!(m.norm, 1.0, epsilon = 1e-6);
        // mixture mean is -E[V]/2 = -theta tau / 2
        assert_relative_eq!(m.mean, -0.5 * p.theta * tau, max_relative = 1e-3);
        assert!(m.zeta < 0.0, "zeta = {}", m.zeta);
    }

    #[test]
    fn mhm_table_matches_direct_evaluation() {
        let p = mhm_params();
        let tau = 5.0;
        let z_max = 10.0 * (p.theta * tau).sqrt();
        let table = MhmDensityTable::new(&p, tau, z_max, 2048).unwrap();
        for &z in &[0.1 * z_max, 0.33 * z_max, 0.9 * z_max, -0.5 * z_max] {
            let direct = mhm_return_density(z, &p, tau).unwrap();
            assert_relative_eq!(table.density(z), direct, max_relative = 1e-4);
        }
        // beyond the grid the local-slope extension should stay close
        let z = 1.2 * z_max;
        assert_relative_eq!(
            table.density(z),
            mhm_return_density(z, &p, tau).unwrap(),
            max_relative = 0.10
        );
        // CDF sanity: symmetric around 0, increasing, reaching ~1
        assert_relative_eq!(table.cdf(0.0), 0.5, epsilon = 1e-12);
        assert!(table.cdf(-z_max) < 0.01);
        assert!(table.cdf(z_max) > 0.99);
        assert_relative_eq!(
            table.cdf(0.2 * z_max) + table.cdf(-0.2 * z_max),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn densities_are_non_negative_and_finite_on_a_dense_grid() {
        let tau = 20.0;
        let cases = [
            (ReturnDensityFamily::StudentMm, mm_params()),
            (ReturnDensityFamily::SkewedMm, mm_params()),
            (ReturnDensityFamily::Mhm, mhm_params()),
        ];
        for (family, params) in cases {
            let d = ReturnDensity::new(family, params, tau).unwrap();
            let span = 12.0 * (params.theta * tau).sqrt();
            for i in 0..10_000 {
                let z = -span + 2.0 * span * i as f64 / 9_999.0;
                let v = d.evaluate(z).unwrap();
                assert!(v.is_finite() && v >= 0.0, "{family:?} at z={z}: {v}");
            }
        }
    }

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        // deterministic sample at uniform quantile midpoints of a known CDF
        let cdf = |x: f64| 1.0 - (-x).exp();
        let n = 1000;
        let sample: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let d = ks_against_cdf(&sample, cdf);
        assert!(d <= 0.5 / n as f64 + 1e-12, "d = {d}");
    }
}
