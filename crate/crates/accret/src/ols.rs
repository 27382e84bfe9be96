//! Ordinary least squares on paired samples, shared by the trend fit, the
//! log-log tail fit, and the moment-scaling fits.

/// Result of a simple linear regression y = intercept + slope * x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (NaN when fewer than 3 points).
    pub slope_stderr: f64,
    /// Coefficient of determination.
    pub r_squared: f64,
    /// Root-mean-square residual.
    pub residual_rms: f64,
    pub n: usize,
}

/// Fits y = a + b*x by least squares. Requires at least two points and
/// non-degenerate x; the caller is expected to validate.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> OlsFit {
    assert_eq!(xs.len(), ys.len(), "ols_fit: length mismatch");
    let n = xs.len();
    assert!(n >= 2, "ols_fit: need at least two points");
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    assert!(sxx > 0.0, "ols_fit: degenerate x values");
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let e = y - (intercept + slope * x);
        ss_res += e * e;
    }
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    OlsFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        residual_rms: (ss_res / nf).sqrt(),
        n,
    }
}
