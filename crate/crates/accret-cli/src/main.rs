//! accret: accumulated stock-return analysis.
//!
//! Subcommands: `analyze` runs the empirical pipeline on a price CSV,
//! `simulate` integrates the stochastic-variance models, `fit` fits a
//! closed-form return density to the data, `emit` re-emits plot files from a
//! previously written bundle. Exit codes: 0 success, 2 configuration error,
//! 3 data error.

use accret::pipeline::{
    emit_plot_data, load_bundle, run_pipeline, write_bundle, FitStageConfig, ModelConfig,
    PipelineConfig, PipelineError,
};
use accret::svmodels::{simulate_returns, simulate_variance, FitFamily, SvModel};
use accret::tailfit::TailPolicy;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "accret", version, about = "Accumulated stock-return analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the empirical pipeline: ingest, de-trend, moments, tail analysis.
    Analyze(AnalyzeArgs),
    /// Integrate a stochastic-variance model and write the paths.
    Simulate(SimulateArgs),
    /// Fit a closed-form return density to the de-trended returns.
    Fit(FitArgs),
    /// Re-emit plot files for one figure from an existing bundle.
    Emit(EmitArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; flags override individual entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input price CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Name of the date column.
    #[arg(long)]
    date_col: Option<String>,
    /// Name of the price column.
    #[arg(long)]
    price_col: Option<String>,
    /// chrono format of the date column (default %Y-%m-%d).
    #[arg(long)]
    date_format: Option<String>,
    /// Field delimiter (default ',').
    #[arg(long)]
    delimiter: Option<char>,
    /// Fail on the first malformed row instead of dropping it.
    #[arg(long)]
    strict: bool,
    /// Root seed for all stochastic stages.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_toml_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(input) = &self.input {
            config.input = Some(input.clone());
        }
        if let Some(c) = &self.date_col {
            config.columns.date_col = c.clone();
        }
        if let Some(c) = &self.price_col {
            config.columns.price_col = c.clone();
        }
        if let Some(f) = &self.date_format {
            config.columns.date_format = f.clone();
        }
        if let Some(d) = self.delimiter {
            config.columns.delimiter = d;
        }
        if self.strict {
            config.columns.strict = true;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Accumulation windows, e.g. 1,5,10,20,50,100.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<usize>>,
    /// Windows for tail analysis (defaults to --tau).
    #[arg(long, value_delimiter = ',')]
    tail_tau: Option<Vec<usize>>,
    /// Tail selection fraction (top share of CCDF points).
    #[arg(long)]
    tail_fraction: Option<f64>,
    /// Confidence level for bands and outlier flags.
    #[arg(long)]
    ci_level: Option<f64>,
    /// Bootstrap replications for the confidence band.
    #[arg(long)]
    n_boot: Option<usize>,
    /// Deepest rank tested for outliers.
    #[arg(long)]
    max_rank: Option<usize>,
    /// Also write one (start_index, value) file per tau into this directory.
    #[arg(long, value_name = "DIR")]
    emit_returns: Option<PathBuf>,
    /// Output directory for the report bundle.
    #[arg(long, default_value = "accret-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML configuration file with a [models] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variance model when no config is given.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    kappa_m: Option<f64>,
    #[arg(long)]
    kappa_h: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for path files.
    #[arg(long, default_value = "accret-sim")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Density family: student_mm or mhm.
    #[arg(long)]
    family: Option<String>,
    /// Accumulation window of the fitted sample.
    #[arg(long)]
    tau: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "accret-fit")]
    out: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    /// Directory containing a bundle.json written by `analyze`.
    #[arg(long)]
    bundle: PathBuf,
    /// Figure id: trend, timeseries, counts, ccdf-tails, pdf, m1-scaling,
    /// m2-scaling, skewness, model-density.
    #[arg(long)]
    figure: String,
    /// Output directory (defaults to the bundle directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_analyze(args: &AnalyzeArgs) -> Result<(), PipelineError> {
    let mut config = args.common.build()?;
    if let Some(taus) = &args.tau {
        config.taus = taus.clone();
    }
    if let Some(taus) = &args.tail_tau {
        config.tail_taus = taus.clone();
    }
    if let Some(f) = args.tail_fraction {
        config.tail.policy = TailPolicy::Fraction(f);
    }
    if let Some(l) = args.ci_level {
        config.tail.ci_level = l;
    }
    if let Some(n) = args.n_boot {
        config.tail.n_boot = n;
    }
    if let Some(r) = args.max_rank {
        config.tail.max_rank = r;
    }
    if args.emit_returns.is_some() {
        config.emit_returns = true;
    }
    let bundle = run_pipeline(&config)?;
    let files = write_bundle(&bundle, &args.out)?;
    if let Some(dir) = &args.emit_returns {
        std::fs::create_dir_all(dir)?;
        for (tau, rows) in &bundle.returns_by_tau {
            let mut text = String::from("start_index,value\n");
            for (idx, v) in rows {
                text.push_str(&format!("{idx},{v}\n"));
            }
            std::fs::write(dir.join(format!("returns_tau{tau}.csv")), text)?;
        }
    }
    println!(
        "analyzed {} prices ({} windows, {} tail fits); wrote {} files to {}",
        bundle.n_prices,
        bundle.moments.len(),
        bundle.tails.len(),
        files.len(),
        args.out.display()
    );
    if bundle.dropped_rows > 0 {
        eprintln!("warning: dropped {} malformed row(s)", bundle.dropped_rows);
    }
    for w in &bundle.gap_warnings {
        eprintln!("warning: {w}");
    }
    if let Some(err) = &bundle.fit_error {
        eprintln!("warning: fit stage failed: {err}");
    }
    Ok(())
}

fn parse_model(name: &str) -> Result<SvModel, PipelineError> {
    match name.to_ascii_lowercase().as_str() {
        "mm" => Ok(SvModel::Mm),
        "hm" => Ok(SvModel::Hm),
        "mhm" => Ok(SvModel::Mhm),
        other => Err(PipelineError::Config(format!(
            "unknown model {other:?}: expected mm, hm or mhm"
        ))),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<(), PipelineError> {
    let (mut mc, seed) = match &args.config {
        Some(path) => {
            let config = PipelineConfig::from_toml_file(path)?;
            let mc = config
                .models
                .clone()
                .ok_or_else(|| PipelineError::Config("config has no [models] section".into()))?;
            (mc, config.seed)
        }
        None => (ModelConfig::default(), 42),
    };
    if let Some(m) = &args.model {
        mc.model = parse_model(m)?;
    }
    if let Some(v) = args.gamma {
        mc.gamma = v;
    }
    if let Some(v) = args.theta {
        mc.theta = v;
    }
    if let Some(v) = args.kappa_m {
        mc.kappa_m = v;
    }
    if let Some(v) = args.kappa_h {
        mc.kappa_h = v;
    }
    if let Some(v) = args.dt {
        mc.dt = v;
    }
    if let Some(v) = args.n_steps {
        mc.n_steps = v;
    }
    let seed = args.seed.unwrap_or(seed);

    let params = mc
        .params()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let v0 = mc.v0.unwrap_or(params.theta);
    let path = simulate_variance(
        &params,
        mc.model,
        mc.dt,
        mc.n_steps,
        v0,
        accret::rng::stream_seed(seed, "model-variance", 0),
    )?;
    let returns = simulate_returns(
        &path,
        mc.drift_mode,
        mc.drift_offset,
        accret::rng::stream_seed(seed, "model-returns", 0),
    );

    std::fs::create_dir_all(&args.out)?;
    let mut text = String::from("step,v,dx\n");
    for (i, (v, dx)) in path.values.iter().zip(&returns.values).enumerate() {
        text.push_str(&format!("{i},{v},{dx}\n"));
    }
    let path_file = args.out.join("path.csv");
    std::fs::write(&path_file, text)?;
    let summary = serde_json::json!({
        "model": mc.model.to_string(),
        "seed": seed,
        "dt": mc.dt,
        "n_steps": mc.n_steps,
        "variance_mean": path.mean(),
        "clamp_events": path.clamp_events,
        "feller_satisfied": params.feller_satisfied(),
    });
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "simulated {} {} steps (dt={}), mean v = {:e}, {} clamps; wrote {}",
        mc.n_steps,
        mc.model,
        mc.dt,
        path.mean(),
        path.clamp_events,
        path_file.display()
    );
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<(), PipelineError> {
    let mut config = args.common.build()?;
    let family = match &args.family {
        Some(name) => match name.to_ascii_lowercase().as_str() {
            "student_mm" | "student" => Some(FitFamily::StudentMm),
            "mhm" => Some(FitFamily::Mhm),
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown family {other:?}: expected student_mm or mhm"
                )))
            }
        },
        None => None,
    };
    let existing = config.fit;
    let fit = FitStageConfig {
        family: family
            .or(existing.map(|f| f.family))
            .unwrap_or(FitFamily::StudentMm),
        tau: args.tau.or(existing.map(|f| f.tau)).unwrap_or(1),
    };
    config.fit = Some(fit);
    // fitting needs the empirical stages only up to the return sample
    config.taus = vec![fit.tau];
    config.tail_taus = vec![fit.tau];
    config.plot_taus = vec![fit.tau];

    let bundle = run_pipeline(&config)?;
    if let Some(err) = &bundle.fit_error {
        return Err(PipelineError::Config(format!("fit failed: {err}")));
    }
    std::fs::create_dir_all(&args.out)?;
    let record = bundle.fit.as_ref().unwrap();
    let out = args.out.join("fit.json");
    std::fs::write(&out, serde_json::to_string_pretty(record)?)?;
    println!(
        "fitted {:?} at tau={}: theta={:e}, ks={:.4}, loglik={:.2}; wrote {}",
        record.family,
        record.fit.tau,
        record.fit.params.theta(),
        record.fit.ks_distance,
        record.fit.log_likelihood,
        out.display()
    );
    Ok(())
}

fn run_emit(args: &EmitArgs) -> Result<(), PipelineError> {
    let bundle = load_bundle(&args.bundle)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.bundle.join("plots"));
    let files = emit_plot_data(&bundle, &args.figure, &out)?;
    println!(
        "emitted {} file(s) for {} to {}",
        files.len(),
        args.figure,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::Emit(args) => run_emit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
