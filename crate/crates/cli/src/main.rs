//! `sdrop`: runs the synthetic structured-dropout experiments and writes CSV traces.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Deserialize;
use structured_dropout::experiment::{
    run_experiment, Dims, ExperimentKind, ExperimentSpec, ThetaConvention,
};
use structured_dropout::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum Experiment {
    DetEquivalence,
    GlobalMinConvergence,
    DropconnectEquivalence,
    DropblockCorrection,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::DetEquivalence => Self::DetEquivalence,
            Experiment::GlobalMinConvergence => Self::GlobalMinConvergence,
            Experiment::DropconnectEquivalence => Self::DropconnectEquivalence,
            Experiment::DropblockCorrection => Self::DropblockCorrection,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Convention {
    Raw,
    WidthScaled,
}

impl From<Convention> for ThetaConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Raw => Self::Raw,
            Convention::WidthScaled => Self::WidthScaled,
        }
    }
}

/// Synthetic experiments for Dropout, DropBlock and DropConnect on one-hidden-layer linear
/// networks.
///
/// Exit status: 0 on success, 1 on I/O failure, 2 on usage errors or a failed --check,
/// 3 when training diverges.
#[derive(Debug, Parser)]
#[command(name = "sdrop", version)]
struct Cli {
    /// Experiment to run.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Output dimension.
    #[arg(long)]
    a: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    b: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    d: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Block size.
    #[arg(long)]
    r: Option<usize>,
    /// Retain probability.
    #[arg(long)]
    theta: Option<f64>,
    /// Learning rate (default 0.5/‖X‖₂², divided by N for SGD; halved on divergence).
    #[arg(long)]
    eta: Option<f64>,
    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Masks averaged for the logged stochastic objective.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 if the experiment's tolerance check fails.
    #[arg(long)]
    check: bool,
    /// Whether --theta is the training retain probability (raw) or the retain probability
    /// at width r (width-scaled).
    #[arg(long, value_enum)]
    theta_convention: Option<Convention>,
    /// Log every this many iterations (default: about 100 rows).
    #[arg(long)]
    log_stride: Option<usize>,
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    experiment: Option<Experiment>,
    a: Option<usize>,
    b: Option<usize>,
    d: Option<usize>,
    n: Option<usize>,
    r: Option<usize>,
    theta: Option<f64>,
    eta: Option<f64>,
    iters: Option<usize>,
    seed: Option<u64>,
    #[serde(alias = "mc_samples", alias = "mcsamples")]
    mc_samples: Option<usize>,
    out: Option<PathBuf>,
    check: Option<bool>,
    #[serde(alias = "theta_convention", alias = "thetaconvention")]
    theta_convention: Option<Convention>,
    #[serde(alias = "log_stride", alias = "logstride")]
    log_stride: Option<usize>,
}

fn load_config(path: &PathBuf) -> Result<FileConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

fn build_spec(cli: Cli) -> Result<ExperimentSpec, Error> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let experiment = cli
        .experiment
        .or(file.experiment)
        .ok_or_else(|| Error::InvalidArgument("--experiment is required".into()))?;
    let out = cli
        .out
        .or(file.out)
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    let defaults = Dims::default();
    let mut spec = ExperimentSpec::new(experiment.into(), out);
    spec.dims = Dims {
        a: cli.a.or(file.a).unwrap_or(defaults.a),
        b: cli.b.or(file.b).unwrap_or(defaults.b),
        d: cli.d.or(file.d).unwrap_or(defaults.d),
        n: cli.n.or(file.n).unwrap_or(defaults.n),
        r: cli.r.or(file.r).unwrap_or(defaults.r),
    };
    spec.theta = cli.theta.or(file.theta).unwrap_or(spec.theta);
    spec.eta = cli.eta.or(file.eta);
    spec.iters = cli.iters.or(file.iters);
    spec.seed = cli.seed.or(file.seed).unwrap_or(spec.seed);
    spec.mc_samples = cli.mc_samples.or(file.mc_samples).unwrap_or(spec.mc_samples);
    spec.check = cli.check || file.check.unwrap_or(false);
    if let Some(c) = cli.theta_convention.or(file.theta_convention) {
        spec.theta_convention = c.into();
    }
    spec.log_stride = cli.log_stride.or(file.log_stride);
    Ok(spec)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 1,
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let spec = build_spec(cli)?;
    let outcome = run_experiment(&spec)?;
    for file in &outcome.files {
        eprintln!("wrote {}", file.display());
    }
    println!("{}", outcome.summary);
    match outcome.check {
        Some(check) if !check.passed => {
            println!("check FAILED: {}", check.detail);
            Ok(2)
        }
        Some(check) => {
            println!("check passed: {}", check.detail);
            Ok(0)
        }
        None => Ok(0),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
