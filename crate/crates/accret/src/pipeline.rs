//! End-to-end pipeline: ingest -> de-trend -> moments/skewness scaling ->
//! gain/loss tail analysis -> optional model simulation and fitting, emitted
//! as a reproducible report bundle.
//!
//! Reproducibility contract: a fixed config (including its single root seed)
//! produces byte-identical numeric payloads, independent of thread count.
//! All randomness is derived from the root seed through named sub-streams;
//! nothing in the bundle depends on wall-clock time.

use crate::diststats::{
    empirical_ccdf, empirical_pdf, scaling_table, BinPolicy, DistError, MomentsReport,
    ScalingTable, Side,
};
use crate::ingest::{load_price_series, validate_series, ColumnSpec, IngestError};
use crate::returns::{accumulated_returns, fit_trend, log_return_curve, partition_gains_losses};
use crate::svmodels::{
    fit_return_density, simulate_returns, simulate_variance, DriftMode, FitFamily, ReturnDensity,
    ReturnDensityFamily, ReturnDensityFit, SvError, SvModel, SvModelParams,
};
use crate::tailfit::{analyze_tail, RankTest, TailConfig, TailError, TailFit};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(#[from] IngestError),
    #[error("returns error: {0}")]
    Returns(#[from] crate::returns::ReturnsError),
    #[error("distribution error: {0}")]
    Dist(#[from] DistError),
    #[error("tail analysis error: {0}")]
    Tail(#[from] TailError),
    #[error("model error: {0}")]
    Model(#[from] SvError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("plot stage {0:?} did not run in this bundle")]
    StageNotRun(String),
    #[error("unknown figure id {0:?}")]
    UnknownFigure(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownFigure(_) => 2,
            _ => 3,
        }
    }
}

/// Model-simulation stage settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub model: SvModel,
    pub gamma: f64,
    pub theta: f64,
    pub kappa_m: f64,
    pub kappa_h: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Starting variance; defaults to theta.
    pub v0: Option<f64>,
    pub drift_mode: DriftMode,
    /// Phenomenological re-centering rate subtracted per unit time.
    pub drift_offset: f64,
    /// Window used for the emitted density curves.
    pub tau: f64,
    /// Number of grid points per density curve.
    pub z_points: usize,
    /// Half-width of the density grid in units of sqrt(theta * tau).
    pub z_span: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: SvModel::Mm,
            gamma: 0.05,
            theta: 0.95e-5,
            kappa_m: 0.0796,
            kappa_h: 0.0,
            dt: 1.0,
            n_steps: 100_000,
            v0: None,
            drift_mode: DriftMode::None,
            drift_offset: 0.0,
            tau: 20.0,
            z_points: 401,
            z_span: 8.0,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> Result<SvModelParams, SvError> {
        SvModelParams::new(self.gamma, self.theta, self.kappa_m, self.kappa_h)
    }
}

/// Model-fitting stage settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitStageConfig {
    pub family: FitFamily,
    pub tau: usize,
}

/// Full pipeline configuration; a TOML file with these fields is the primary
/// interface, CLI flags override individual entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input price CSV; required for the empirical stages.
    pub input: Option<PathBuf>,
    pub columns: ColumnSpec,
    /// Windows for the moment/skewness table.
    pub taus: Vec<usize>,
    /// Windows for tail analysis (defaults to `taus` when empty).
    pub tail_taus: Vec<usize>,
    /// Windows for per-window plot payloads (timeseries, PDF, trend curve).
    pub plot_taus: Vec<usize>,
    pub tail: TailConfig,
    pub bins: BinPolicy,
    /// Root seed for every stochastic sub-stream.
    pub seed: u64,
    /// Write per-tau de-trended return files into the bundle.
    pub emit_returns: bool,
    pub models: Option<ModelConfig>,
    pub fit: Option<FitStageConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            columns: ColumnSpec::default(),
            taus: vec![1, 5, 10, 20, 50, 100],
            tail_taus: Vec::new(),
            plot_taus: vec![1, 20, 50, 100],
            tail: TailConfig::default(),
            bins: BinPolicy::FreedmanDiaconis,
            seed: 42,
            emit_returns: false,
            models: None,
            fit: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.taus.is_empty() {
            return Err(PipelineError::Config("taus must be non-empty".into()));
        }
        if self.taus.contains(&0) || self.tail_taus.contains(&0) {
            return Err(PipelineError::Config("tau values must be >= 1".into()));
        }
        if !(self.tail.ci_level > 0.5 && self.tail.ci_level < 1.0) {
            return Err(PipelineError::Config(format!(
                "tail.ci_level must lie in (0.5, 1), got {}",
                self.tail.ci_level
            )));
        }
        if self.tail.n_boot < 1000 {
            return Err(PipelineError::Config(format!(
                "tail.n_boot must be >= 1000, got {}",
                self.tail.n_boot
            )));
        }
        if let Some(m) = &self.models {
            m.params()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            if !(m.dt > 0.0) || m.n_steps == 0 {
                return Err(PipelineError::Config(
                    "models.dt must be > 0 and models.n_steps >= 1".into(),
                ));
            }
        }
        if let Some(f) = &self.fit {
            if f.tau == 0 {
                return Err(PipelineError::Config("fit.tau must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn effective_tail_taus(&self) -> Vec<usize> {
        let mut taus = if self.tail_taus.is_empty() {
            self.taus.clone()
        } else {
            self.tail_taus.clone()
        };
        taus.sort_unstable();
        taus.dedup();
        taus
    }

    fn effective_plot_taus(&self) -> Vec<usize> {
        let mut taus: Vec<usize> = self
            .plot_taus
            .iter()
            .copied()
            .filter(|t| self.taus.contains(t))
            .collect();
        if taus.is_empty() {
            taus = vec![*self.taus.iter().min().unwrap()];
        }
        taus.sort_unstable();
        taus.dedup();
        taus
    }
}

/// Gain/loss/zero counts for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub tau: usize,
    pub total: usize,
    pub gains: usize,
    pub losses: usize,
    pub zeros: usize,
}

/// Moments row plus the divergent-third-moment warning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentsRecord {
    #[serde(flatten)]
    pub report: MomentsReport,
    /// Set when a fitted CCDF tail slope magnitude below 3 implies the
    /// population third moment may not exist (PDF tail exponent < 4).
    pub tail_unstable_m3: bool,
}

/// Trend-fit row for one stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub tau: usize,
    pub slope_per_day: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

/// One CCDF point with tail-fit annotations for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfPlotPoint {
    pub x: f64,
    pub survival: f64,
    /// Fitted survival, band bounds: populated inside the tail region only.
    pub fit: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// "pDK"/"nDK" at flagged ranks.
    pub flag: Option<String>,
}

/// Tail analysis of one (tau, side).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRecord {
    pub tau: usize,
    pub side: Side,
    pub fit: TailFit,
    /// Full CCDF with fit/band/flag annotations.
    pub points: Vec<CcdfPlotPoint>,
}

/// De-trended return series for one window (window end dates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeseriesBlock {
    pub tau: usize,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// Histogram of the full return distribution for one window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdfBlock {
    pub tau: usize,
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
}

/// Subsampled log-return curve with its linear fit, for one stride.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendCurve {
    pub tau: usize,
    pub t: Vec<usize>,
    pub r: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Closed-form density curve on a z grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCurve {
    pub family: ReturnDensityFamily,
    pub tau: f64,
    pub z: Vec<f64>,
    pub density: Vec<f64>,
}

/// Model-simulation stage output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBlock {
    pub config: ModelConfig,
    pub variance_mean: f64,
    pub clamp_events: usize,
    pub return_mean_per_day: f64,
    pub return_variance_per_day: f64,
    pub density_curves: Vec<DensityCurve>,
}

/// Model-fit stage output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub family: FitFamily,
    pub n: usize,
    #[serde(flatten)]
    pub fit: ReturnDensityFit,
    /// Slope of the m2(tau) linear fit over the configured taus, the
    /// empirical counterpart of the fitted theta.
    pub m2_slope: f64,
}

/// Everything the pipeline produced; serialized as bundle.json so plot data
/// can be re-emitted without recomputation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: PipelineConfig,
    pub series_label: String,
    pub n_prices: usize,
    pub dropped_rows: usize,
    pub gap_warnings: Vec<String>,
    pub mu_daily: f64,
    pub counts: Vec<CountRecord>,
    pub moments: Vec<MomentsRecord>,
    pub scaling: ScalingTable,
    pub trend: Vec<TrendRecord>,
    pub trend_curves: Vec<TrendCurve>,
    pub tails: Vec<TailRecord>,
    pub timeseries: Vec<TimeseriesBlock>,
    pub pdfs: Vec<PdfBlock>,
    pub returns_by_tau: Vec<(usize, Vec<(usize, f64)>)>,
    pub model: Option<ModelBlock>,
    pub fit: Option<FitRecord>,
    /// Fit-stage failure, recorded without aborting the empirical stages.
    pub fit_error: Option<String>,
}

fn annotate_ccdf(
    points: &[crate::diststats::CcdfPoint],
    fit: &TailFit,
    rank_tests: &[RankTest],
) -> Vec<CcdfPlotPoint> {
    let flagged: BTreeMap<u64, String> = rank_tests
        .iter()
        .filter(|t| t.flagged)
        .map(|t| (t.x.to_bits(), t.class.to_string()))
        .collect();
    let band: BTreeMap<u64, (f64, f64)> = fit
        .band
        .iter()
        .map(|b| (b.x.to_bits(), (b.lower, b.upper)))
        .collect();
    points
        .iter()
        .map(|p| {
            let in_tail = p.x >= fit.threshold;
            let key = p.x.to_bits();
            CcdfPlotPoint {
                x: p.x,
                survival: p.survival,
                fit: in_tail
                    .then(|| crate::tailfit::fitted_survival(fit.slope, fit.intercept, p.x)),
                lower: band.get(&key).map(|b| b.0),
                upper: band.get(&key).map(|b| b.1),
                flag: flagged.get(&key).cloned(),
            }
        })
        .collect()
}

/// Runs every enabled stage and assembles the bundle in memory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ReportBundle, PipelineError> {
    config.validate()?;
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| PipelineError::Config("input path is required".into()))?;
    let (series, load_report) = load_price_series(input, &config.columns)?;
    let gap_report = validate_series(&series);

    let curve = log_return_curve(&series);
    let mu = fit_trend(&curve, 1)?.slope;

    let mut taus = config.taus.clone();
    taus.sort_unstable();
    taus.dedup();
    let tail_taus = config.effective_tail_taus();
    let plot_taus = config.effective_plot_taus();

    // trend fits per stride (slopes comparable across strides)
    let mut trend = Vec::new();
    for &tau in &taus {
        if curve.len() > 2 * tau {
            let f = fit_trend(&curve, tau)?;
            trend.push(TrendRecord {
                tau,
                slope_per_day: f.slope,
                intercept: f.intercept,
                residual_rms: f.residual_rms,
            });
        }
    }

    // moments and scaling
    let scaling = scaling_table(&series, &taus, config.bins)?;

    // counts and tails
    let mut counts = Vec::new();
    let mut tails: Vec<TailRecord> = Vec::new();
    let mut min_abs_slope_by_tau: BTreeMap<usize, f64> = BTreeMap::new();
    for &tau in &taus {
        let sample = accumulated_returns(&curve, tau, mu)?;
        let split = partition_gains_losses(&sample);
        counts.push(CountRecord {
            tau,
            total: sample.len(),
            gains: split.gains.len(),
            losses: split.loss_magnitudes.len(),
            zeros: split.zeros,
        });
        if tail_taus.contains(&tau) {
            for (side_idx, (side, magnitudes)) in [
                (Side::Gain, &split.gains),
                (Side::Loss, &split.loss_magnitudes),
            ]
            .into_iter()
            .enumerate()
            {
                let ccdf = empirical_ccdf(magnitudes, side)?;
                let seed = crate::rng::stream_seed(
                    config.seed,
                    "tail-analysis",
                    (tau as u64) << 1 | side_idx as u64,
                );
                let (_region, fit) = analyze_tail(&ccdf, &config.tail, seed)?;
                let entry = min_abs_slope_by_tau.entry(tau).or_insert(f64::INFINITY);
                *entry = entry.min(fit.slope.abs());
                let points = annotate_ccdf(&ccdf.points, &fit, &fit.rank_tests);
                tails.push(TailRecord {
                    tau,
                    side,
                    fit,
                    points,
                });
            }
        }
    }

    let moments = scaling
        .reports
        .iter()
        .map(|r| MomentsRecord {
            report: *r,
            tail_unstable_m3: min_abs_slope_by_tau
                .get(&r.tau)
                .map(|s| *s < 3.0)
                .unwrap_or(false),
        })
        .collect();

    // per-window plot payloads
    let mut timeseries = Vec::new();
    let mut pdfs = Vec::new();
    let mut trend_curves = Vec::new();
    let mut returns_by_tau = Vec::new();
    for &tau in &plot_taus {
        let sample = accumulated_returns(&curve, tau, mu)?;
        let dates = sample
            .start_indices
            .iter()
            .map(|&t| series.dates[t + tau])
            .collect();
        timeseries.push(TimeseriesBlock {
            tau,
            dates,
            values: sample.values.clone(),
        });
        let pdf = empirical_pdf(&sample.values, config.bins)?;
        pdfs.push(PdfBlock {
            tau,
            bin_edges: pdf.bin_edges,
            densities: pdf.densities,
        });
        let f = fit_trend(&curve, tau)?;
        let mut t_idx = Vec::new();
        let mut r_val = Vec::new();
        let mut fitted = Vec::new();
        let mut t = 0usize;
        while t < curve.len() {
            t_idx.push(t);
            r_val.push(curve.r[t]);
            fitted.push(f.intercept + f.slope * t as f64);
            t += tau;
        }
        trend_curves.push(TrendCurve {
            tau,
            t: t_idx,
            r: r_val,
            fitted,
        });
    }
    if config.emit_returns {
        for &tau in &taus {
            let sample = accumulated_returns(&curve, tau, mu)?;
            returns_by_tau.push((
                tau,
                sample
                    .start_indices
                    .iter()
                    .copied()
                    .zip(sample.values.iter().copied())
                    .collect(),
            ));
        }
    }

    // optional model stage
    let model = match &config.models {
        Some(mc) => Some(run_model_stage(mc, config.seed)?),
        None => None,
    };

    // optional fit stage: failures recorded, never fatal
    let (fit, fit_error) = match &config.fit {
        Some(fc) => match run_fit_stage(fc, &curve, mu, &scaling) {
            Ok(record) => (Some(record), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, None),
    };

    Ok(ReportBundle {
        config: config.clone(),
        series_label: series.label.clone(),
        n_prices: series.len(),
        dropped_rows: load_report.dropped_rows.len(),
        gap_warnings: gap_report.warnings,
        mu_daily: mu,
        counts,
        moments,
        scaling,
        trend,
        trend_curves,
        tails,
        timeseries,
        pdfs,
        returns_by_tau,
        model,
        fit,
        fit_error,
    })
}

fn run_model_stage(mc: &ModelConfig, seed: u64) -> Result<ModelBlock, PipelineError> {
    let params = mc.params()?;
    let v0 = mc.v0.unwrap_or(params.theta);
    let path = simulate_variance(
        &params,
        mc.model,
        mc.dt,
        mc.n_steps,
        v0,
        crate::rng::stream_seed(seed, "model-variance", 0),
    )?;
    let returns = simulate_returns(
        &path,
        mc.drift_mode,
        mc.drift_offset,
        crate::rng::stream_seed(seed, "model-returns", 0),
    );
    let n = returns.values.len() as f64;
    let mean = returns.values.iter().sum::<f64>() / n;
    let var = returns
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;

    let families: &[ReturnDensityFamily] = match mc.model {
        SvModel::Mm => &[
            ReturnDensityFamily::StudentMm,
            ReturnDensityFamily::SkewedMm,
        ],
        SvModel::Mhm => &[ReturnDensityFamily::Mhm],
        SvModel::Hm => &[],
    };
    let mut density_curves = Vec::new();
    let span = mc.z_span * (params.theta * mc.tau).sqrt();
    for &family in families {
        let density = ReturnDensity::new(family, params, mc.tau)?;
        let mut zs = Vec::with_capacity(mc.z_points);
        let mut ds = Vec::with_capacity(mc.z_points);
        for i in 0..mc.z_points {
            let z = -span + 2.0 * span * i as f64 / (mc.z_points - 1) as f64;
            zs.push(z);
            ds.push(density.evaluate(z)?);
        }
        density_curves.push(DensityCurve {
            family,
            tau: mc.tau,
            z: zs,
            density: ds,
        });
    }
    Ok(ModelBlock {
        config: mc.clone(),
        variance_mean: path.mean(),
        clamp_events: path.clamp_events,
        return_mean_per_day: mean / mc.dt,
        return_variance_per_day: var / mc.dt,
        density_curves,
    })
}

fn run_fit_stage(
    fc: &FitStageConfig,
    curve: &crate::returns::LogReturnCurve,
    mu: f64,
    scaling: &ScalingTable,
) -> Result<FitRecord, PipelineError> {
    let sample = accumulated_returns(curve, fc.tau, mu)?;
    let fit = fit_return_density(&sample.values, fc.tau as f64, fc.family)?;
    Ok(FitRecord {
        family: fc.family,
        n: sample.len(),
        fit,
        m2_slope: scaling.m2_fit.slope,
    })
}

// ---------------------------------------------------------------------------
// bundle writing and plot emission

struct HashingWriter {
    out_dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl HashingWriter {
    fn new(out_dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<PathBuf, PipelineError> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        f.write_all(content.as_bytes())?;
        f.flush()?;
        self.hashes.insert(
            rel.to_string(),
            hex::encode(Sha256::digest(content.as_bytes())),
        );
        Ok(path)
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn moments_csv(bundle: &ReportBundle) -> String {
    let mut s = String::from("tau,m1,mode,median,m2,m3,zeta,zeta1,zeta2,tail_unstable_m3\n");
    for m in &bundle.moments {
        let r = m.report;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.tau, r.m1, r.mode, r.median, r.m2, r.m3, r.zeta, r.zeta1, r.zeta2, m.tail_unstable_m3
        ));
    }
    s
}

fn counts_csv(bundle: &ReportBundle) -> String {
    let mut s = String::from("tau,total,gains,losses,zeros\n");
    for c in &bundle.counts {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.tau, c.total, c.gains, c.losses, c.zeros
        ));
    }
    s
}

fn tails_csv(bundle: &ReportBundle) -> String {
    let mut s = String::from(
        "tau,side,k,threshold,slope,slope_stderr,intercept,r_squared,ks_distance,hill_alpha,ci_level,n_outliers\n",
    );
    for t in &bundle.tails {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.tau,
            t.side,
            t.fit.k,
            t.fit.threshold,
            t.fit.slope,
            t.fit.slope_stderr,
            t.fit.intercept,
            t.fit.r_squared,
            t.fit.ks_distance,
            t.fit.hill_alpha,
            t.fit.ci_level,
            t.fit.outliers.len()
        ));
    }
    s
}

fn outliers_csv(bundle: &ReportBundle) -> String {
    let mut s = String::from("tau,side,rank,x,class,u_stat,p_value\n");
    for t in &bundle.tails {
        for o in &t.fit.outliers {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.tau, t.side, o.rank, o.x, o.class, o.u_stat, o.p_value
            ));
        }
    }
    s
}

fn trend_csv(bundle: &ReportBundle) -> String {
    let mut s = String::from("tau,slope_per_day,intercept,residual_rms\n");
    for t in &bundle.trend {
        s.push_str(&format!(
            "{},{},{},{}\n",
            t.tau, t.slope_per_day, t.intercept, t.residual_rms
        ));
    }
    s
}

fn scaling_csvs(bundle: &ReportBundle) -> (String, String, String) {
    let sc = &bundle.scaling;
    let mut m1 = String::from("tau,m1,m1_over_tau,fit\n");
    let mut m2 = String::from("tau,m2,m2_over_tau,fit\n");
    let mut skew = String::from("tau,zeta,zeta1,zeta2\n");
    for (i, r) in sc.reports.iter().enumerate() {
        let tau = r.tau as f64;
        m1.push_str(&format!(
            "{},{},{},{}\n",
            r.tau,
            r.m1,
            sc.m1_over_tau[i],
            sc.m1_fit.intercept + sc.m1_fit.slope * tau
        ));
        m2.push_str(&format!(
            "{},{},{},{}\n",
            r.tau,
            r.m2,
            sc.m2_over_tau[i],
            sc.m2_fit.intercept + sc.m2_fit.slope * tau
        ));
        skew.push_str(&format!("{},{},{},{}\n", r.tau, r.zeta, r.zeta1, r.zeta2));
    }
    (m1, m2, skew)
}

fn ccdf_csv(record: &TailRecord) -> String {
    let mut s = String::from("x,survival,fit,lower,upper,flag\n");
    for p in &record.points {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.x,
            p.survival,
            csv_opt(p.fit),
            csv_opt(p.lower),
            csv_opt(p.upper),
            p.flag.clone().unwrap_or_default()
        ));
    }
    s
}

fn timeseries_csv(block: &TimeseriesBlock) -> String {
    let mut s = String::from("date,dx\n");
    for (d, v) in block.dates.iter().zip(&block.values) {
        s.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), v));
    }
    s
}

fn pdf_csv(block: &PdfBlock) -> String {
    let mut s = String::from("bin_lo,bin_hi,density\n");
    for (i, d) in block.densities.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{}\n",
            block.bin_edges[i],
            block.bin_edges[i + 1],
            d
        ));
    }
    s
}

fn trend_curve_csv(curve: &TrendCurve) -> String {
    let mut s = String::from("t,r,fit\n");
    for i in 0..curve.t.len() {
        s.push_str(&format!(
            "{},{},{}\n",
            curve.t[i], curve.r[i], curve.fitted[i]
        ));
    }
    s
}

fn density_curve_csv(curve: &DensityCurve) -> String {
    let mut s = String::from("z,density\n");
    for (z, d) in curve.z.iter().zip(&curve.density) {
        s.push_str(&format!("{},{}\n", z, d));
    }
    s
}

fn family_file_tag(family: ReturnDensityFamily) -> &'static str {
    match family {
        ReturnDensityFamily::StudentMm => "student_mm",
        ReturnDensityFamily::Mhm => "mhm",
        ReturnDensityFamily::SkewedMm => "skewed_mm",
    }
}

/// Writes the bundle directory: per-stage CSVs, plot payloads, bundle.json,
/// and a manifest.json whose hash map covers every other emitted file.
pub fn write_bundle(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut w = HashingWriter::new(out_dir)?;
    let mut written = vec![
        w.write("moments.csv", &moments_csv(bundle))?,
        w.write("counts.csv", &counts_csv(bundle))?,
        w.write("tails.csv", &tails_csv(bundle))?,
        w.write("outliers.csv", &outliers_csv(bundle))?,
        w.write("trend.csv", &trend_csv(bundle))?,
    ];
    let (m1, m2, skew) = scaling_csvs(bundle);
    written.push(w.write("plots/m1_scaling.csv", &m1)?);
    written.push(w.write("plots/m2_scaling.csv", &m2)?);
    written.push(w.write("plots/skewness.csv", &skew)?);
    for record in &bundle.tails {
        let rel = format!("plots/ccdf_tau{}_{}.csv", record.tau, record.side);
        written.push(w.write(&rel, &ccdf_csv(record))?);
    }
    for block in &bundle.timeseries {
        let rel = format!("plots/timeseries_tau{}.csv", block.tau);
        written.push(w.write(&rel, &timeseries_csv(block))?);
    }
    for block in &bundle.pdfs {
        let rel = format!("plots/pdf_tau{}.csv", block.tau);
        written.push(w.write(&rel, &pdf_csv(block))?);
    }
    for curve in &bundle.trend_curves {
        let rel = format!("plots/trend_tau{}.csv", curve.tau);
        written.push(w.write(&rel, &trend_curve_csv(curve))?);
    }
    for (tau, rows) in &bundle.returns_by_tau {
        let mut s = String::from("start_index,value\n");
        for (idx, v) in rows {
            s.push_str(&format!("{},{}\n", idx, v));
        }
        written.push(w.write(&format!("returns/returns_tau{tau}.csv"), &s)?);
    }
    if let Some(model) = &bundle.model {
        for curve in &model.density_curves {
            let rel = format!(
                "model/density_{}_tau{}.csv",
                family_file_tag(curve.family),
                curve.tau
            );
            written.push(w.write(&rel, &density_curve_csv(curve))?);
        }
        written.push(w.write("model/summary.json", &serde_json::to_string_pretty(&model)?)?);
    }
    if let Some(fit) = &bundle.fit {
        written.push(w.write("model/fit.json", &serde_json::to_string_pretty(fit)?)?);
    }

    written.push(w.write("bundle.json", &serde_json::to_string(bundle)?)?);

    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a PipelineConfig,
        tool_version: &'static str,
        files: &'a BTreeMap<String, String>,
    }
    let manifest = Manifest {
        config: &bundle.config,
        tool_version: env!("CARGO_PKG_VERSION"),
        files: &w.hashes,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest_json)?;
    written.push(path);
    Ok(written)
}

/// Re-emits the delimited files for one figure id from a persisted bundle.
pub fn emit_plot_data(
    bundle: &ReportBundle,
    figure: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut write = |rel: String, content: String| -> Result<(), PipelineError> {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        files.push(path);
        Ok(())
    };

    match figure {
        "ccdf-tails" => {
            if bundle.tails.is_empty() {
                return Err(PipelineError::StageNotRun(figure.into()));
            }
            for record in &bundle.tails {
                write(
                    format!("ccdf_tau{}_{}.csv", record.tau, record.side),
                    ccdf_csv(record),
                )?;
            }
        }
        "timeseries" => {
            if bundle.timeseries.is_empty() {
                return Err(PipelineError::StageNotRun(figure.into()));
            }
            for block in &bundle.timeseries {
                write(
                    format!("timeseries_tau{}.csv", block.tau),
                    timeseries_csv(block),
                )?;
            }
        }
        "pdf" => {
            if bundle.pdfs.is_empty() {
                return Err(PipelineError::StageNotRun(figure.into()));
            }
            for block in &bundle.pdfs {
                write(format!("pdf_tau{}.csv", block.tau), pdf_csv(block))?;
            }
        }
        "trend" => {
            if bundle.trend_curves.is_empty() {
                return Err(PipelineError::StageNotRun(figure.into()));
            }
            for curve in &bundle.trend_curves {
                write(
                    format!("trend_tau{}.csv", curve.tau),
                    trend_curve_csv(curve),
                )?;
            }
        }
        "counts" => write("counts.csv".into(), counts_csv(bundle))?,
        "m1-scaling" => {
            let (m1, _, _) = scaling_csvs(bundle);
            write("m1_scaling.csv".into(), m1)?;
        }
        "m2-scaling" => {
            let (_, m2, _) = scaling_csvs(bundle);
            write("m2_scaling.csv".into(), m2)?;
        }
        "skewness" => {
            let (_, _, skew) = scaling_csvs(bundle);
            write("skewness.csv".into(), skew)?;
        }
        "model-density" => {
            let model = bundle
                .model
                .as_ref()
                .ok_or_else(|| PipelineError::StageNotRun(figure.into()))?;
            for curve in &model.density_curves {
                write(
                    format!(
                        "density_{}_tau{}.csv",
                        family_file_tag(curve.family),
                        curve.tau
                    ),
                    density_curve_csv(curve),
                )?;
            }
        }
        other => return Err(PipelineError::UnknownFigure(other.into())),
    }
    Ok(files)
}

/// Loads a previously written bundle.json.
pub fn load_bundle(bundle_dir: &Path) -> Result<ReportBundle, PipelineError> {
    let path = bundle_dir.join("bundle.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;
    use std::fs;

    /// Synthetic GBM-like daily price series, written as CSV.
    pub(crate) fn write_synthetic_prices(path: &Path, n: usize, seed: u64) -> usize {
        let mut rng = crate::rng::stream_rng(seed, "synthetic-prices", 0);
        let normal = rand_distr::Normal::new(4e-4f64, 0.011).unwrap();
        let mut log_p = 4.6f64;
        let start = NaiveDate::from_ymd_opt(1980, 1, 2).unwrap();
        let mut s = String::from("date,close\n");
        let mut date = start;
        for _ in 0..n {
            s.push_str(&format!("{},{}\n", date.format("%Y-%m-%d"), log_p.exp()));
            log_p += normal.sample(&mut rng);
            date += chrono::Duration::days(if date.format("%a").to_string() == "Fri" {
                3
            } else {
                1
            });
        }
        fs::write(path, s).unwrap();
        n
    }

    fn small_config(input: &Path) -> PipelineConfig {
        PipelineConfig {
            input: Some(input.to_path_buf()),
            taus: vec![1, 5],
            tail_taus: vec![1],
            plot_taus: vec![1],
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn minimal_run_produces_expected_records() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 3000, 1);
        let config = PipelineConfig {
            taus: vec![1],
            tail_taus: vec![1],
            plot_taus: vec![1],
            ..small_config(&input)
        };
        let bundle = run_pipeline(&config).unwrap();
        assert_eq!(bundle.moments.len(), 1);
        assert_eq!(bundle.tails.len(), 2); // gain and loss
        assert_eq!(bundle.counts.len(), 1);
        assert_eq!(bundle.counts[0].total, 2999);
        assert!(bundle.fit.is_none());
        assert!(bundle.model.is_none());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 2500, 2);
        let config = small_config(&input);
        let b1 = run_pipeline(&config).unwrap();
        let b2 = run_pipeline(&config).unwrap();
        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        write_bundle(&b1, &out1).unwrap();
        write_bundle(&b2, &out2).unwrap();
        for entry in walk_files(&out1) {
            let rel = entry.strip_prefix(&out1).unwrap();
            let a = fs::read(&entry).unwrap();
            let b = fs::read(out2.join(rel)).unwrap();
            assert_eq!(a, b, "mismatch in {}", rel.display());
        }
    }

    fn walk_files(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn manifest_covers_every_emitted_file() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 2500, 3);
        let out = dir.path().join("out");
        let bundle = run_pipeline(&small_config(&input)).unwrap();
        let written = write_bundle(&bundle, &out).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        let files = manifest["files"].as_object().unwrap();
        for path in written {
            let rel = path
                .strip_prefix(&out)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            if rel == "manifest.json" {
                continue;
            }
            let hash = files
                .get(rel.as_str())
                .unwrap_or_else(|| panic!("{rel} missing from manifest"))
                .as_str()
                .unwrap();
            let content = fs::read(&path).unwrap();
            assert_eq!(hash, hex::encode(Sha256::digest(&content)), "hash of {rel}");
        }
    }

    #[test]
    fn emit_requires_stage_and_knows_figures() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 2500, 4);
        let bundle = run_pipeline(&small_config(&input)).unwrap();
        let out = dir.path().join("plots");
        assert!(matches!(
            emit_plot_data(&bundle, "model-density", &out),
            Err(PipelineError::StageNotRun(_))
        ));
        assert!(matches!(
            emit_plot_data(&bundle, "no-such-figure", &out),
            Err(PipelineError::UnknownFigure(_))
        ));
        let files = emit_plot_data(&bundle, "ccdf-tails", &out).unwrap();
        assert_eq!(files.len(), 2);
        let schema = fs::read_to_string(&files[0]).unwrap();
        assert!(schema.starts_with("x,survival,fit,lower,upper,flag\n"));
        let m2 = emit_plot_data(&bundle, "m2-scaling", &out).unwrap();
        let text = fs::read_to_string(&m2[0]).unwrap();
        assert!(text.starts_with("tau,m2,m2_over_tau,fit\n"));
    }

    #[test]
    fn bundle_roundtrips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 2500, 5);
        let out = dir.path().join("out");
        let bundle = run_pipeline(&small_config(&input)).unwrap();
        write_bundle(&bundle, &out).unwrap();
        let loaded = load_bundle(&out).unwrap();
        assert_eq!(loaded.counts, bundle.counts);
        assert_eq!(loaded.mu_daily, bundle.mu_daily);
        assert_eq!(loaded.tails.len(), bundle.tails.len());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let no_taus = PipelineConfig {
            taus: vec![],
            ..Default::default()
        };
        assert!(matches!(no_taus.validate(), Err(PipelineError::Config(_))));

        let mut few_boots = PipelineConfig::default();
        few_boots.tail.n_boot = 100;
        assert!(matches!(
            few_boots.validate(),
            Err(PipelineError::Config(_))
        ));

        let mut bad_level = PipelineConfig::default();
        bad_level.tail.ci_level = 1.5;
        assert!(matches!(
            bad_level.validate(),
            Err(PipelineError::Config(_))
        ));

        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
    }

    #[test]
    fn toml_config_parses_with_defaults() {
        let text = r#"
            input = "prices.csv"
            taus = [1, 5, 10, 20]
            seed = 99

            [tail]
            ci_level = 0.99
            n_boot = 2000
            max_rank = 5
            policy = { kind = "fraction", value = 0.2 }

            [bins]
            kind = "count"
            value = 50
        "#;
        let parsed = PipelineConfig::from_toml_str(text).unwrap();
        assert_eq!(parsed.input.as_deref(), Some(Path::new("prices.csv")));
        assert_eq!(parsed.taus, vec![1, 5, 10, 20]);
        assert_eq!(parsed.seed, 99);
        assert_eq!(parsed.tail.ci_level, 0.99);
        assert_eq!(parsed.tail.n_boot, 2000);
        assert_eq!(parsed.tail.max_rank, 5);
        assert_eq!(
            parsed.tail.policy,
            crate::tailfit::TailPolicy::Fraction(0.2)
        );
        assert_eq!(parsed.bins, BinPolicy::Count(50));
        // unspecified sections fall back to defaults
        assert!(parsed.models.is_none());
        assert!(!parsed.emit_returns);
        parsed.validate().unwrap();
    }

    #[test]
    fn model_stage_runs_and_emits_density_curves() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        write_synthetic_prices(&input, 2500, 6);
        let mut config = small_config(&input);
        config.models = Some(ModelConfig {
            n_steps: 5000,
            ..Default::default()
        });
        let bundle = run_pipeline(&config).unwrap();
        let model = bundle.model.as_ref().unwrap();
        assert_eq!(model.density_curves.len(), 2); // Student + skewed for MM
        assert!(model.variance_mean > 0.0);
        let out = dir.path().join("out");
        write_bundle(&bundle, &out).unwrap();
        assert!(out.join("model/summary.json").exists());
    }

    #[test]
    fn fit_stage_failure_is_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("prices.csv");
        // too few rows for the fit stage (needs 1000 returns) but plenty for
        // the empirical stages
        write_synthetic_prices(&input, 600, 7);
        let mut config = PipelineConfig {
            taus: vec![1],
            tail_taus: vec![1],
            plot_taus: vec![1],
            ..small_config(&input)
        };
        config.fit = Some(FitStageConfig {
            family: FitFamily::StudentMm,
            tau: 1,
        });
        let bundle = run_pipeline(&config).unwrap();
        assert!(bundle.fit.is_none());
        assert!(bundle
            .fit_error
            .as_ref()
            .unwrap()
            .contains("sample too small"));
        assert_eq!(bundle.moments.len(), 1);
    }
}
