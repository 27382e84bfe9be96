//! Log-return curves, linear growth-trend fits, de-trended accumulated
//! returns over sliding windows, and the gain/loss partition.
//!
//! The de-trended return accumulated over `tau` trading days starting at day
//! `t` is `r[t+tau] - r[t] - mu * tau`, where `r` is the cumulative log
//! return and `mu` the daily trend slope. Windows slide by one day, so a
//! series with `n` daily returns yields `n - tau + 1` values.

use crate::ingest::PriceSeries;
use crate::ols::ols_fit;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReturnsError {
    #[error("need curve length > 2*tau for a trend fit (len {len}, tau {tau})")]
    InsufficientPoints { len: usize, tau: usize },
    #[error("accumulation window tau={tau} too large for curve of length {len}")]
    WindowTooLarge { tau: usize, len: usize },
    #[error("tau must be >= 1")]
    ZeroTau,
    #[error("de-trending slope must be finite")]
    NonFiniteSlope,
}

/// Cumulative log return per trading day, anchored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReturnCurve {
    /// r[n] = log(prices[n] / prices[0]); r[0] = 0.
    pub r: Vec<f64>,
}

impl LogReturnCurve {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Number of daily returns (one less than the number of prices).
    pub fn daily_returns(&self) -> usize {
        self.r.len() - 1
    }
}

/// Linear fit of the cumulative log-return curve sampled at stride `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub tau: usize,
    /// Slope per trading day (directly comparable across strides).
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

/// De-trended returns accumulated over `tau`-day windows sliding by one day.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    pub tau: usize,
    pub values: Vec<f64>,
    /// Daily slope used for de-trending.
    pub mu_used: f64,
    /// Day index of each window start.
    pub start_indices: Vec<usize>,
}

impl ReturnSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gain/loss split of a return sample. Losses are stored as magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GainLossSplit {
    pub gains: Vec<f64>,
    pub loss_magnitudes: Vec<f64>,
    pub zeros: usize,
}

/// Cumulative log returns r[n] = log(prices[n]/prices[0]).
pub fn log_return_curve(series: &PriceSeries) -> LogReturnCurve {
    let p0 = series.prices[0];
    let r = series.prices.iter().map(|p| (p / p0).ln()).collect();
    LogReturnCurve { r }
}

/// Least-squares trend of the curve subsampled at t = 0, tau, 2*tau, ...
///
/// The abscissa is the day index itself, so the slope is per day for every
/// stride and slopes for different `tau` are directly comparable.
pub fn fit_trend(curve: &LogReturnCurve, tau: usize) -> Result<TrendFit, ReturnsError> {
    if tau == 0 {
        return Err(ReturnsError::ZeroTau);
    }
    if curve.len() <= 2 * tau {
        return Err(ReturnsError::InsufficientPoints {
            len: curve.len(),
            tau,
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut t = 0usize;
    while t < curve.len() {
        xs.push(t as f64);
        ys.push(curve.r[t]);
        t += tau;
    }
    let fit = ols_fit(&xs, &ys);
    Ok(TrendFit {
        tau,
        slope: fit.slope,
        intercept: fit.intercept,
        residual_rms: fit.residual_rms,
    })
}

/// De-trended accumulated returns: values[t] = r[t+tau] - r[t] - mu*tau for
/// every daily start index t.
pub fn accumulated_returns(
    curve: &LogReturnCurve,
    tau: usize,
    mu: f64,
) -> Result<ReturnSample, ReturnsError> {
    if tau == 0 {
        return Err(ReturnsError::ZeroTau);
    }
    if !mu.is_finite() {
        return Err(ReturnsError::NonFiniteSlope);
    }
    if curve.len() < tau + 1 {
        return Err(ReturnsError::WindowTooLarge {
            tau,
            len: curve.len(),
        });
    }
    let n = curve.len() - tau;
    let drift = mu * tau as f64;
    let mut values = Vec::with_capacity(n);
    let mut start_indices = Vec::with_capacity(n);
    for t in 0..n {
        values.push(curve.r[t + tau] - curve.r[t] - drift);
        start_indices.push(t);
    }
    Ok(ReturnSample {
        tau,
        values,
        mu_used: mu,
        start_indices,
    })
}

/// Splits a sample into strictly positive gains, loss magnitudes, and a count
/// of exact zeros (excluded from both sides).
pub fn partition_gains_losses(sample: &ReturnSample) -> GainLossSplit {
    let mut gains = Vec::new();
    let mut loss_magnitudes = Vec::new();
    let mut zeros = 0usize;
    for &v in &sample.values {
        if v > 0.0 {
            gains.push(v);
        } else if v < 0.0 {
            loss_magnitudes.push(-v);
        } else {
            zeros += 1;
        }
    }
    GainLossSplit {
        gains,
        loss_magnitudes,
        zeros,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PriceSeries;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn series_from_prices(prices: Vec<f64>) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = (0..prices.len() as i64)
            .map(|i| start + chrono::Duration::days(i))
            .collect();
        PriceSeries::new(dates, prices, "test").unwrap()
    }

    #[test]
    fn constant_prices_give_zero_curve() {
        let s = series_from_prices(vec![100.0, 100.0, 100.0]);
        let curve = log_return_curve(&s);
        assert_eq!(curve.r, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn exponential_prices_give_exact_logs() {
        let e = std::f64::consts::E;
        let s = series_from_prices(vec![1.0, e, e * e]);
        let curve = log_return_curve(&s);
        assert_relative_eq!(curve.r[0], 0.0);
        assert_relative_eq!(curve.r[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(curve.r[2], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_line_fits_with_zero_residual_for_every_stride() {
        let mu = 0.0005;
        let prices: Vec<f64> = (0..500).map(|t| 100.0 * (mu * t as f64).exp()).collect();
        let curve = log_return_curve(&series_from_prices(prices));
        for tau in [1usize, 7, 20, 100] {
            let fit = fit_trend(&curve, tau).unwrap();
            assert_relative_eq!(fit.slope, mu, epsilon = 1e-12);
            assert!(fit.residual_rms < 1e-12, "tau={tau}");
        }
    }

    #[test]
    fn noisy_line_slope_within_tolerance() {
        let mu = 0.0005;
        let prices: Vec<f64> = (0..2000)
            .map(|t| {
                let noise = if t % 2 == 0 { 0.01 } else { -0.01 };
                100.0 * (mu * t as f64 + noise).exp()
            })
            .collect();
        let curve = log_return_curve(&series_from_prices(prices));
        let fit = fit_trend(&curve, 1).unwrap();
        assert_relative_eq!(fit.slope, mu, epsilon = 1e-7);
    }

    #[test]
    fn trend_fit_rejects_short_curves() {
        let s = series_from_prices(vec![1.0, 1.1, 1.2, 1.3]);
        let curve = log_return_curve(&s);
        assert!(matches!(
            fit_trend(&curve, 2),
            Err(ReturnsError::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn perfect_detrending_leaves_zeros() {
        let mu = 3e-4;
        let prices: Vec<f64> = (0..300).map(|t| 50.0 * (mu * t as f64).exp()).collect();
        let curve = log_return_curve(&series_from_prices(prices));
        let fitted = fit_trend(&curve, 1).unwrap().slope;
        for tau in [1usize, 5, 20, 130] {
            let sample = accumulated_returns(&curve, tau, fitted).unwrap();
            assert!(
                sample.values.iter().all(|v| v.abs() <= 1e-12),
                "tau={tau} max={:?}",
                sample.values.iter().cloned().fold(0.0f64, f64::max)
            );
        }
    }

    #[test]
    fn count_identity_holds_for_all_windows() {
        let prices: Vec<f64> = (0..64).map(|t| 100.0 + t as f64).collect();
        let curve = log_return_curve(&series_from_prices(prices));
        let n_daily = curve.daily_returns();
        for tau in 1..=n_daily {
            let sample = accumulated_returns(&curve, tau, 0.0).unwrap();
            assert_eq!(sample.len(), n_daily - tau + 1, "tau={tau}");
            assert_eq!(sample.start_indices.len(), sample.len());
        }
        assert!(matches!(
            accumulated_returns(&curve, n_daily + 1, 0.0),
            Err(ReturnsError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn window_sums_match_daily_return_sums() {
        // additivity before de-trending, within float accumulation error
        let mut prices = vec![100.0];
        let mut state = 0x9E3779B97F4A7C15u64;
        for _ in 0..400 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            let r = 0.03 * (u - 0.5);
            let last = *prices.last().unwrap();
            prices.push(last * f64::exp(r));
        }
        let curve = log_return_curve(&series_from_prices(prices.clone()));
        let daily: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        let tau = 17;
        let sample = accumulated_returns(&curve, tau, 0.0).unwrap();
        for (t, &v) in sample.values.iter().enumerate() {
            let direct: f64 = daily[t..t + tau].iter().sum();
            assert_relative_eq!(v, direct, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn partition_counts_and_signs() {
        let sample = ReturnSample {
            tau: 1,
            values: vec![-1.0, 0.0, 2.0],
            mu_used: 0.0,
            start_indices: vec![0, 1, 2],
        };
        let split = partition_gains_losses(&sample);
        assert_eq!(split.gains, vec![2.0]);
        assert_eq!(split.loss_magnitudes, vec![1.0]);
        assert_eq!(split.zeros, 1);
        assert_eq!(
            split.gains.len() + split.loss_magnitudes.len() + split.zeros,
            sample.len()
        );
    }
}
