//! Empirical distribution machinery: survival functions of gains and losses,
//! histogram densities, central moments, mode and median, the three skewness
//! coefficients, and their scaling with the accumulation window.
//!
//! Moments use the biased 1/n estimators throughout, matching the population
//! definitions the skewness coefficients are built from.

use crate::ingest::PriceSeries;
use crate::ols::{ols_fit, OlsFit};
use crate::returns::{accumulated_returns, fit_trend, log_return_curve};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {need} values, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error("degenerate sample: all values identical")]
    DegenerateSample,
    #[error("zero variance")]
    ZeroVariance,
    #[error("magnitudes must be strictly positive")]
    NonPositiveMagnitude,
    #[error("returns error: {0}")]
    Returns(#[from] crate::returns::ReturnsError),
}

/// Which side of the return distribution a magnitude sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Gain,
    Loss,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Gain => write!(f, "gain"),
            Side::Loss => write!(f, "loss"),
        }
    }
}

/// One point of an empirical complementary CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    /// Magnitude (distinct within a CCDF).
    pub x: f64,
    /// P(X >= x) = (count of sample values >= x) / n.
    pub survival: f64,
}

/// Empirical CCDF of a magnitude sample, sorted by increasing magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCcdf {
    pub points: Vec<CcdfPoint>,
    pub side: Side,
    /// Sample size (ties collapse into one point, so points.len() <= n).
    pub n: usize,
}

/// Survival probabilities at every distinct magnitude of the sample.
pub fn empirical_ccdf(values: &[f64], side: Side) -> Result<EmpiricalCcdf, DistError> {
    if values.is_empty() {
        return Err(DistError::EmptySample);
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(DistError::NonPositiveMagnitude);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let nf = n as f64;
    let mut points = Vec::new();
    let mut i = 0usize;
    while i < n {
        let x = sorted[i];
        // count of values >= x is everything at or after the first occurrence
        points.push(CcdfPoint {
            x,
            survival: (n - i) as f64 / nf,
        });
        let mut j = i + 1;
        while j < n && sorted[j] == x {
            j += 1;
        }
        i = j;
    }
    Ok(EmpiricalCcdf { points, side, n })
}

/// Histogram binning policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
#[derive(Default)]
pub enum BinPolicy {
    /// Freedman-Diaconis width 2*IQR/n^(1/3); falls back to Sturges when the
    /// IQR vanishes.
    #[default]
    FreedmanDiaconis,
    /// Fixed number of equal-width bins.
    Count(usize),
    /// Fixed bin width.
    Width(f64),
}

/// Normalized histogram density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPdf {
    /// len = bins + 1, strictly increasing.
    pub bin_edges: Vec<f64>,
    /// Probability density per bin; integrates to 1.
    pub densities: Vec<f64>,
    pub n: usize,
}

impl EmpiricalPdf {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Normalized histogram of `values` with the given binning policy.
pub fn empirical_pdf(values: &[f64], binning: BinPolicy) -> Result<EmpiricalPdf, DistError> {
    let n = values.len();
    if n < 10 {
        return Err(DistError::SampleTooSmall { need: 10, got: n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let max = sorted[n - 1];
    if min == max {
        return Err(DistError::DegenerateSample);
    }
    let range = max - min;
    let bins = match binning {
        BinPolicy::Count(k) => k.max(1),
        BinPolicy::Width(w) => {
            assert!(w > 0.0 && w.is_finite(), "bin width must be positive");
            ((range / w).ceil() as usize).max(1)
        }
        BinPolicy::FreedmanDiaconis => {
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let w = 2.0 * iqr / (n as f64).cbrt();
            if w > 0.0 {
                ((range / w).ceil() as usize).max(1)
            } else {
                // Sturges fallback for heavy-tied samples
                ((n as f64).log2().ceil() as usize + 1).max(1)
            }
        }
    };
    let width = range / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let mut idx = ((v - min) / width) as usize;
        if idx >= bins {
            idx = bins - 1; // v == max lands in the last bin
        }
        counts[idx] += 1;
    }
    let norm = 1.0 / (n as f64 * width);
    let densities = counts.iter().map(|&c| c as f64 * norm).collect();
    let bin_edges = (0..=bins).map(|i| min + i as f64 * width).collect();
    Ok(EmpiricalPdf {
        bin_edges,
        densities,
        n,
    })
}

/// Biased central moments (m1 = mean, m2 = variance, m3 = third central).
pub fn central_moments(values: &[f64]) -> Result<(f64, f64, f64), DistError> {
    let n = values.len();
    if n < 2 {
        return Err(DistError::SampleTooSmall { need: 2, got: n });
    }
    let nf = n as f64;
    let m1 = values.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for &v in values {
        let d = v - m1;
        m2 += d * d;
        m3 += d * d * d;
    }
    Ok((m1, m2 / nf, m3 / nf))
}

/// Sample median; midpoint of the two central order statistics for even n.
pub fn median(values: &[f64]) -> Result<f64, DistError> {
    if values.is_empty() {
        return Err(DistError::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Mode estimate: midpoint of the highest-density bin, ties broken toward
/// the bin nearest `median`.
pub fn mode_estimate(pdf: &EmpiricalPdf, median: f64) -> f64 {
    let mut best: Option<usize> = None;
    for (i, &d) in pdf.densities.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                if d > pdf.densities[b] {
                    best = Some(i);
                } else if d == pdf.densities[b] {
                    let cb = (pdf.bin_center(b) - median).abs();
                    let ci = (pdf.bin_center(i) - median).abs();
                    if ci < cb {
                        best = Some(i);
                    }
                }
            }
        }
    }
    pdf.bin_center(best.expect("pdf has at least one bin"))
}

/// The three skewness coefficients.
///
/// zeta  = m3 / m2^(3/2)           (Fisher-Pearson)
/// zeta1 = (m1 - mode) / m2^(1/2)  (Pearson first)
/// zeta2 = 3 (m1 - median) / m2^(1/2)  (Pearson second)
pub fn skewness_coefficients(
    values: &[f64],
    pdf: &EmpiricalPdf,
) -> Result<(f64, f64, f64), DistError> {
    let (m1, m2, m3) = central_moments(values)?;
    if m2 <= 0.0 {
        return Err(DistError::ZeroVariance);
    }
    let med = median(values)?;
    let mode = mode_estimate(pdf, med);
    let sd = m2.sqrt();
    Ok((m3 / (m2 * sd), (m1 - mode) / sd, 3.0 * (m1 - med) / sd))
}

/// Statistical summary of one accumulation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub tau: usize,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub mode: f64,
    pub median: f64,
    pub zeta: f64,
    pub zeta1: f64,
    pub zeta2: f64,
}

/// Builds a `MomentsReport` for a return sample, keeping the coefficient
/// identities exact among the stored fields.
pub fn moments_report(
    values: &[f64],
    tau: usize,
    binning: BinPolicy,
) -> Result<MomentsReport, DistError> {
    let (m1, m2, m3) = central_moments(values)?;
    if m2 <= 0.0 {
        return Err(DistError::ZeroVariance);
    }
    let pdf = empirical_pdf(values, binning)?;
    let med = median(values)?;
    let mode = mode_estimate(&pdf, med);
    let sd = m2.sqrt();
    Ok(MomentsReport {
        tau,
        m1,
        m2,
        m3,
        mode,
        median: med,
        zeta: m3 / (m2 * sd),
        zeta1: (m1 - mode) / sd,
        zeta2: 3.0 * (m1 - med) / sd,
    })
}

/// Linear fits of the moment-scaling curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl From<OlsFit> for ScalingFit {
    fn from(f: OlsFit) -> Self {
        Self {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
        }
    }
}

/// Moment reports across accumulation windows plus scaling fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub reports: Vec<MomentsReport>,
    pub m1_fit: ScalingFit,
    pub m2_fit: ScalingFit,
    pub m1_over_tau: Vec<f64>,
    pub m2_over_tau: Vec<f64>,
    /// Daily trend slope used for de-trending every window.
    pub mu_daily: f64,
}

/// One `MomentsReport` per window, evaluated in parallel and merged in
/// ascending `tau` order, with linear fits of m1(tau) and m2(tau).
pub fn scaling_table(
    series: &PriceSeries,
    taus: &[usize],
    binning: BinPolicy,
) -> Result<ScalingTable, DistError> {
    assert!(!taus.is_empty(), "taus must be non-empty");
    let curve = log_return_curve(series);
    let mu = fit_trend(&curve, 1)?.slope;
    let mut taus = taus.to_vec();
    taus.sort_unstable();
    taus.dedup();
    let reports: Result<Vec<MomentsReport>, DistError> = taus
        .par_iter()
        .map(|&tau| {
            let sample = accumulated_returns(&curve, tau, mu)?;
            moments_report(&sample.values, tau, binning)
        })
        .collect();
    let reports = reports?;
    let xs: Vec<f64> = reports.iter().map(|r| r.tau as f64).collect();
    let m1s: Vec<f64> = reports.iter().map(|r| r.m1).collect();
    let m2s: Vec<f64> = reports.iter().map(|r| r.m2).collect();
    let (m1_fit, m2_fit) = if reports.len() >= 2 {
        (ols_fit(&xs, &m1s).into(), ols_fit(&xs, &m2s).into())
    } else {
        let degenerate = ScalingFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
        };
        (degenerate, degenerate)
    };
    let m1_over_tau = reports.iter().map(|r| r.m1 / r.tau as f64).collect();
    let m2_over_tau = reports.iter().map(|r| r.m2 / r.tau as f64).collect();
    Ok(ScalingTable {
        reports,
        m1_fit,
        m2_fit,
        m1_over_tau,
        m2_over_tau,
        mu_daily: mu,
    })
}
