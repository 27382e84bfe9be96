//! Power-law analysis of CCDF tails: tail-region selection, log-log linear
//! fit, parametric-bootstrap confidence bands, and the order-statistics
//! U-test for Dragon-King (pDK) and negative Dragon-King (nDK) outliers.
//!
//! The U-test transforms tail magnitudes to y_i = log(x_i / u); under a
//! Pareto tail the normalized spacings z_i = i (y_(i) - y_(i+1)) are i.i.d.
//! exponential, so the ratio of the top-r spacing sum to the total spacing
//! sum is exactly Beta(r, k-1-r) distributed. Ranks whose ratio is
//! significantly too large flag pDK; significantly too small flags nDK
//! (a truncated tail). The statistic is scale-free, so flags and p-values
//! are invariant under rescaling of the magnitudes.

use crate::diststats::EmpiricalCcdf;
use crate::ols::ols_fit;
use crate::rng::stream_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("tail region has {k} points, need at least {need}")]
    TailTooSmall { k: usize, need: usize },
    #[error("all tail magnitudes are equal; log-log fit is degenerate")]
    DegenerateX,
    #[error("confidence level must lie in (0.5, 1), got {0}")]
    InvalidLevel(f64),
    #[error("need at least 1000 bootstrap replications, got {0}")]
    TooFewReplications(usize),
    #[error("max_rank {max_rank} out of range for a {k}-point tail")]
    RankOutOfRange { max_rank: usize, k: usize },
    #[error("tail threshold must be positive")]
    NonPositiveThreshold,
}

/// Minimum number of CCDF points in a fittable tail region.
pub const MIN_TAIL_POINTS: usize = 10;

/// How the tail region is chosen from a CCDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum TailPolicy {
    /// Top fraction of CCDF points by magnitude (default 0.1).
    Fraction(f64),
    /// All points with magnitude >= threshold.
    Threshold(f64),
}

impl Default for TailPolicy {
    fn default() -> Self {
        TailPolicy::Fraction(0.1)
    }
}

/// A tail point: distinct magnitude, absolute survival probability, and the
/// number of sample values equal to that magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub x: f64,
    pub survival: f64,
    pub multiplicity: usize,
}

/// Tail region of a CCDF, ordered by decreasing magnitude (rank order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRegion {
    /// Smallest magnitude included.
    pub threshold: f64,
    /// Points with x >= threshold, largest first.
    pub points: Vec<TailPoint>,
    /// Number of distinct magnitudes in the region.
    pub k: usize,
    /// Size of the full sample the CCDF was built from.
    pub n: usize,
}

impl TailRegion {
    /// Number of sample values in the tail (>= threshold), counting ties.
    pub fn exceedances(&self) -> usize {
        self.points.iter().map(|p| p.multiplicity).sum()
    }
}

/// Deterministic tail selection.
pub fn select_tail(ccdf: &EmpiricalCcdf, policy: TailPolicy) -> Result<TailRegion, TailError> {
    let pts = &ccdf.points;
    let total = pts.len();
    let k = match policy {
        TailPolicy::Fraction(f) => {
            assert!(f > 0.0 && f <= 1.0, "fraction must lie in (0, 1]");
            ((f * total as f64) + 1e-9).floor() as usize
        }
        TailPolicy::Threshold(u) => {
            if !(u > 0.0) {
                return Err(TailError::NonPositiveThreshold);
            }
            pts.iter().filter(|p| p.x >= u).count()
        }
    };
    if k < MIN_TAIL_POINTS {
        return Err(TailError::TailTooSmall {
            k,
            need: MIN_TAIL_POINTS,
        });
    }
    // ccdf points are ascending in x; take the top k and reverse to rank order
    let mut points = Vec::with_capacity(k);
    for i in (total - k..total).rev() {
        let survival_above = if i + 1 < total {
            pts[i + 1].survival
        } else {
            0.0
        };
        let multiplicity = ((pts[i].survival - survival_above) * ccdf.n as f64).round() as usize;
        points.push(TailPoint {
            x: pts[i].x,
            survival: pts[i].survival,
            multiplicity,
        });
    }
    Ok(TailRegion {
        threshold: points.last().unwrap().x,
        points,
        k,
        n: ccdf.n,
    })
}

/// Outlier class from the U-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierClass {
    /// Possible Dragon King: top-rank mass significantly too large.
    Pdk,
    /// Negative Dragon King: top-rank mass significantly too small.
    Ndk,
}

impl std::fmt::Display for OutlierClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutlierClass::Pdk => write!(f, "pDK"),
            OutlierClass::Ndk => write!(f, "nDK"),
        }
    }
}

/// U-test result for one candidate rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    /// 1-based rank (1 = largest magnitude).
    pub rank: usize,
    /// Magnitude at this rank.
    pub x: f64,
    /// Ratio of the top-rank spacing sum to the total spacing sum.
    pub u_stat: f64,
    /// Two-sided p-value from the exact Beta null.
    pub p_value: f64,
    pub class: OutlierClass,
    pub flagged: bool,
}

/// Pointwise confidence band entry, aligned with the tail points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Log-log linear fit of a CCDF tail with diagnostics, band and outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Log-log CCDF slope (negative for a decaying tail).
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// Kolmogorov-Smirnov distance between the tail data and the fitted
    /// Pareto law (conditional on exceeding the threshold).
    pub ks_distance: f64,
    /// Hill maximum-likelihood tail exponent, as a cross-check diagnostic;
    /// the reported slope is always the linear fit.
    pub hill_alpha: f64,
    pub threshold: f64,
    pub k: usize,
    /// Confidence level used for the band and outlier flags.
    pub ci_level: f64,
    pub band: Vec<BandPoint>,
    /// Flagged outliers only; `rank_tests` keeps every tested rank.
    pub outliers: Vec<RankTest>,
    pub rank_tests: Vec<RankTest>,
}

/// Fitted survival probability at magnitude `x` from the log-log line.
pub fn fitted_survival(slope: f64, intercept: f64, x: f64) -> f64 {
    10f64.powf(intercept + slope * x.log10())
}

/// OLS fit of log10(survival) on log10(x) over the region points.
pub fn fit_tail_loglog(region: &TailRegion) -> Result<TailFit, TailError> {
    let first = region.points[0].x;
    if region.points.iter().all(|p| p.x == first) {
        return Err(TailError::DegenerateX);
    }
    let xs: Vec<f64> = region.points.iter().map(|p| p.x.log10()).collect();
    let ys: Vec<f64> = region.points.iter().map(|p| p.survival.log10()).collect();
    let fit = ols_fit(&xs, &ys);

    // KS distance of the conditional tail against the fitted Pareto
    let s_u = region.points.last().unwrap().survival;
    let a = -fit.slope;
    let mut ks = 0.0f64;
    for p in &region.points {
        let emp = p.survival / s_u;
        let model = (p.x / region.threshold).powf(-a);
        ks = ks.max((emp - model).abs());
    }

    // Hill estimator over exceedances (multiplicity-weighted)
    let n_tail: f64 = region.exceedances() as f64;
    let sum_log: f64 = region
        .points
        .iter()
        .map(|p| p.multiplicity as f64 * (p.x / region.threshold).ln())
        .sum();
    let hill_alpha = if sum_log > 0.0 {
        n_tail / sum_log
    } else {
        f64::NAN
    };

    Ok(TailFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
        ks_distance: ks,
        hill_alpha,
        threshold: region.threshold,
        k: region.k,
        ci_level: f64::NAN,
        band: Vec::new(),
        outliers: Vec::new(),
        rank_tests: Vec::new(),
    })
}

/// Parametric-bootstrap pointwise confidence band for the tail CCDF.
///
/// Each replication resamples the tail from the fitted Pareto law
/// (exponent = -slope, lower bound = threshold), rebuilds the CCDF, refits
/// the log-log line on the resampled points, and records each rank's
/// log-survival deviation from that refitted line. The band is the data's
/// fitted line shifted by the pointwise deviation quantiles at
/// (1 +/- level)/2 per rank. Refitting inside every replication makes the
/// deviations nearly pivotal in the exponent, so the pointwise coverage of
/// the observed points calibrates to `level`. Replications are seeded by
/// counter, so the band is identical however they are scheduled.
pub fn ccdf_confidence_band(
    region: &TailRegion,
    fit: &TailFit,
    level: f64,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<BandPoint>, TailError> {
    if !(level > 0.5 && level < 1.0) {
        return Err(TailError::InvalidLevel(level));
    }
    if n_boot < 1000 {
        return Err(TailError::TooFewReplications(n_boot));
    }
    let exponent = -fit.slope;
    let u = region.threshold;
    let m = region.exceedances();
    let k = region.k;
    // rank of each observed point among all exceedances (cumulative ties)
    let mut ranks = Vec::with_capacity(k);
    let mut cum = 0usize;
    for p in &region.points {
        cum += p.multiplicity.max(1);
        ranks.push(cum.min(m) - 1); // 0-based index into descending draws
    }
    let log_survivals: Vec<f64> = region.points.iter().map(|p| p.survival.log10()).collect();

    // per replication: log-survival deviation of each rank from the
    // replicate's own refitted line
    let deviations: Vec<Vec<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, "ccdf-band", b as u64);
            let mut draws: Vec<f64> = (0..m)
                .map(|_| u * rng.random::<f64>().powf(-1.0 / exponent))
                .collect();
            draws.sort_by(|a, b| b.partial_cmp(a).unwrap()); // descending
            let log_x: Vec<f64> = ranks.iter().map(|&r| draws[r].log10()).collect();
            let refit = crate::ols::ols_fit(&log_x, &log_survivals);
            log_x
                .iter()
                .zip(&log_survivals)
                .map(|(lx, ls)| ls - (refit.intercept + refit.slope * lx))
                .collect()
        })
        .collect();

    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    let rank_of = |q: f64| ((q * (n_boot - 1) as f64).round() as usize).min(n_boot - 1);
    let (lo_rank, hi_rank) = (rank_of(lo_q), rank_of(hi_q));
    let mut band = Vec::with_capacity(k);
    let mut column = vec![0.0f64; n_boot];
    for i in 0..k {
        for (b, row) in deviations.iter().enumerate() {
            column[b] = row[i];
        }
        let (_, lo, _) = column.select_nth_unstable_by(lo_rank, |a, b| a.partial_cmp(b).unwrap());
        let d_lo = *lo;
        let (_, hi, _) = column.select_nth_unstable_by(hi_rank, |a, b| a.partial_cmp(b).unwrap());
        let d_hi = *hi;
        let x = region.points[i].x;
        let center = fit.intercept + fit.slope * x.log10();
        band.push(BandPoint {
            x,
            lower: 10f64.powf(center + d_lo),
            upper: 10f64.powf(center + d_hi),
        });
    }
    Ok(band)
}

/// U-test over candidate ranks 1..=max_rank.
///
/// `bonferroni` divides the per-rank flag threshold by `max_rank`.
pub fn u_test_outliers(
    region: &TailRegion,
    level: f64,
    max_rank: usize,
    bonferroni: bool,
) -> Result<Vec<RankTest>, TailError> {
    if !(level > 0.5 && level < 1.0) {
        return Err(TailError::InvalidLevel(level));
    }
    let k = region.k;
    if max_rank < 1 || max_rank + 1 >= k {
        return Err(TailError::RankOutOfRange { max_rank, k });
    }
    // normalized log spacings z_i = i (y_(i) - y_(i+1)), i = 1..k-1
    let y: Vec<f64> = region.points.iter().map(|p| p.x.ln()).collect();
    let mut spacings = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        spacings.push((i + 1) as f64 * (y[i] - y[i + 1]));
    }
    let total: f64 = spacings.iter().sum();
    let alpha = if bonferroni {
        (1.0 - level) / max_rank as f64
    } else {
        1.0 - level
    };

    let mut tests = Vec::with_capacity(max_rank);
    let mut top_sum = 0.0f64;
    for r in 1..=max_rank {
        top_sum += spacings[r - 1];
        let u_stat = top_sum / total;
        let null = Beta::new(r as f64, (k - 1 - r) as f64).expect("valid Beta parameters");
        let cdf = null.cdf(u_stat);
        let p_value = (2.0 * cdf.min(1.0 - cdf)).min(1.0);
        let class = if cdf > 0.5 {
            OutlierClass::Pdk
        } else {
            OutlierClass::Ndk
        };
        tests.push(RankTest {
            rank: r,
            x: region.points[r - 1].x,
            u_stat,
            p_value,
            class,
            flagged: p_value < alpha,
        });
    }
    Ok(tests)
}

/// Tail-analysis configuration shared by the pipeline and the CLI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TailConfig {
    pub policy: TailPolicy,
    pub ci_level: f64,
    pub n_boot: usize,
    pub max_rank: usize,
    pub bonferroni: bool,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            policy: TailPolicy::default(),
            ci_level: 0.95,
            n_boot: 1000,
            max_rank: 10,
            bonferroni: false,
        }
    }
}

/// Full tail analysis: select, fit, band, and U-test in one pass.
pub fn analyze_tail(
    ccdf: &EmpiricalCcdf,
    config: &TailConfig,
    seed: u64,
) -> Result<(TailRegion, TailFit), TailError> {
    let region = select_tail(ccdf, config.policy)?;
    let mut fit = fit_tail_loglog(&region)?;
    fit.ci_level = config.ci_level;
    fit.band = ccdf_confidence_band(&region, &fit, config.ci_level, config.n_boot, seed)?;
    let max_rank = config.max_rank.min(region.k.saturating_sub(2));
    let tests = u_test_outliers(&region, config.ci_level, max_rank, config.bonferroni)?;
    fit.outliers = tests.iter().filter(|t| t.flagged).copied().collect();
    fit.rank_tests = tests;
    Ok((region, fit))
}
