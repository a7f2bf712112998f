use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::{Deserialize, Serialize};

use diffctl::estimators::{period_metrics, Period, PeriodMetrics};
use diffctl::io::{load_chain_csv, read_json, save_trace, write_json, ExperimentConfig};
use diffctl::replicate::{compare_traces, run_replication, write_accuracy_csv, ReplicationConfig};
use diffctl::train::{train, TrainingConfig};
use diffctl::update::{amplitude_ratio, condition1_residual, solve_shift, ResidualReport};
use diffctl::{run_simulation, Controller, Error, FeatureConfig, MlpModel, Result, TPreviousDistribution, UpdateFunction};

/// Proof-of-work difficulty control laboratory.
#[derive(Parser)]
#[command(name = "diffctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller on a hash-rate schedule and write the trace CSV.
    Simulate(SimulateArgs),
    /// Solve the arctan shift D so the update has zero mean under a
    /// T_previous distribution.
    Calibrate(CalibrateArgs),
    /// Train the change-pattern classifier.
    Train(TrainArgs),
    /// Compare two traces period by period.
    Analyze(AnalyzeArgs),
    /// Run the injection/withdrawal experiment with both controllers.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long, env = "DIFFCTL_CONFIG")]
    config: PathBuf,
    /// Output trace CSV.
    #[arg(long, env = "DIFFCTL_OUT", default_value = "trace.csv")]
    out: PathBuf,
    /// RNG seed; overrides simulation.seed in the config.
    #[arg(long, env = "DIFFCTL_SEED")]
    seed: Option<u64>,
    /// Also write a JSON summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistKind {
    Exponential,
    Erlang,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Amplitude A (> 0, dimensionless).
    #[arg(long = "A", alias = "a", allow_negative_numbers = true)]
    a: f64,
    /// Slope B in 1/s (> 0).
    #[arg(long = "B", alias = "b", allow_negative_numbers = true)]
    b: f64,
    /// Center C in seconds.
    #[arg(long = "C", alias = "c", allow_negative_numbers = true)]
    c: f64,
    /// T_previous distribution.
    #[arg(long, value_enum, default_value = "exponential")]
    dist: DistKind,
    /// Mean single-block time in seconds [default: Ethereum zero-drift mean, 9/ln 2].
    #[arg(long)]
    beta: Option<f64>,
    /// Erlang shape (blocks summed into T_previous).
    #[arg(long, default_value_t = 2016)]
    shape: u32,
    /// Output report JSON; printed to standard output when absent.
    #[arg(long, env = "DIFFCTL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainFile {
    training: TrainingConfig,
    features: FeatureConfig,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON with optional "training" and "features" sections [default: built-in settings].
    #[arg(long, env = "DIFFCTL_CONFIG")]
    config: Option<PathBuf>,
    /// Output model file.
    #[arg(long, env = "DIFFCTL_OUT", default_value = "model.bin")]
    out: PathBuf,
    /// Accuracy report JSON; an accuracy CSV is written next to it.
    #[arg(long, default_value = "train_report.json")]
    report: PathBuf,
    /// Training samples per class (overrides the config).
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed (overrides the config).
    #[arg(long, env = "DIFFCTL_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace CSV; give exactly two (baseline first).
    #[arg(long = "trace", num_args = 1, required = true)]
    traces: Vec<PathBuf>,
    /// Periods as name=start:end, comma separated, half-open heights
    /// [default: period1=55000:100000,period2=105000:150000].
    #[arg(long)]
    periods: Option<String>,
    /// Hash-rate window lengths in blocks, comma separated.
    #[arg(long = "W", alias = "windows", value_delimiter = ',', default_value = "2000")]
    windows: Vec<usize>,
    /// Target block time in seconds [default: 9/ln 2].
    #[arg(long)]
    target: Option<f64>,
    /// Output report JSON; printed to standard output when absent.
    #[arg(long, env = "DIFFCTL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Output directory.
    #[arg(long, env = "DIFFCTL_OUT", default_value = "replicate-out")]
    out: PathBuf,
    /// One-tenth scale heights and a small training run.
    #[arg(long)]
    quick: bool,
    /// Use this model instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Replication config JSON [default: built-in settings].
    #[arg(long, env = "DIFFCTL_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for both simulations (overrides the config).
    #[arg(long, env = "DIFFCTL_SEED")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct SimulationSummary {
    seed: u64,
    blocks: usize,
    mean_block_time: f64,
    target_block_time: f64,
    periods: Vec<PeriodMetrics>,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    let target = cfg.target_block_time()?;
    let mut controller = Controller::new(cfg.controller_spec()?)?;
    let trace = run_simulation(&cfg.scenario, &mut controller, &cfg.simulation, cfg.initial_difficulty()?)?;
    save_trace(&trace, &args.out)?;
    let periods = cfg
        .analysis
        .periods
        .iter()
        .filter(|p| !p.slice(&trace.records).is_empty())
        .map(|p| period_metrics(&trace.records, p, target))
        .collect::<Result<Vec<_>>>()?;
    let summary = SimulationSummary {
        seed: cfg.simulation.seed,
        blocks: trace.len(),
        mean_block_time: trace.mean_block_time(),
        target_block_time: target,
        periods,
    };
    if trace.is_empty() {
        println!("blocks 0");
    } else {
        println!("blocks {} mean block time {:.4} s", summary.blocks, summary.mean_block_time);
    }
    for p in &summary.periods {
        println!(
            "{}: mean difficulty {:.6e} mse {:.6e} mean block time {:.4} s",
            p.period.name, p.mean_difficulty, p.mse, p.mean_block_time
        );
    }
    if let Some(path) = &args.summary {
        write_json(path, &summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationOutput {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    distribution: TPreviousDistribution,
    residual: ResidualReport,
    amplitude_ratio_vs_ethereum: f64,
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    // Validates A and B before any integration.
    diffctl::ArctanUpdate::new(args.a, args.b, args.c, 0.0)?;
    let beta = match args.beta {
        Some(b) => b,
        None => diffctl::ethereum_target_block_time()?,
    };
    let dist = match args.dist {
        DistKind::Exponential => TPreviousDistribution::exponential(beta)?,
        DistKind::Erlang => TPreviousDistribution::erlang(args.shape, beta)?,
    };
    let cal = solve_shift(args.a, args.b, args.c, &dist)?;
    let update = UpdateFunction::Arctan(cal.update);
    let out = CalibrationOutput {
        a: cal.update.a,
        b: cal.update.b,
        c: cal.update.c,
        d: cal.update.d,
        residual: condition1_residual(&update, &dist)?,
        amplitude_ratio_vs_ethereum: amplitude_ratio(&UpdateFunction::Ethereum, &update)?,
        distribution: dist,
    };
    info!("D = {:.6e}, residual {:.3e}", out.d, out.residual.residual);
    emit(&args.out, &out)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut file = match &args.config {
        Some(p) => read_json::<TrainFile>(p)?,
        None => TrainFile::default(),
    };
    if let Some(n) = args.samples {
        file.training.samples_per_class = n;
        file.training.eval_samples_per_class = file.training.eval_samples_per_class.min(n.max(1));
    }
    if let Some(seed) = args.seed {
        file.training.seed = seed;
    }
    file.training.validate()?;
    file.features.validate()?;
    let (model, report) = train(&file.training, file.features)?;
    model.save(&args.out)?;
    write_json(&args.report, &report)?;
    write_accuracy_csv(&args.report.with_extension("csv"), &report)?;
    for c in &report.checkpoints {
        println!("{} blocks after change: accuracy {:.4}", c.blocks_since_change, c.accuracy.overall);
    }
    Ok(())
}

fn parse_periods(spec: &str) -> Result<Vec<Period>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .enumerate()
        .map(|(i, item)| {
            let (name, range) = match item.split_once('=') {
                Some((n, r)) => (n.trim().to_string(), r),
                None => (format!("period{}", i + 1), item),
            };
            let bad = || Error::config("periods", format!("cannot parse {item:?}; expected name=start:end"));
            let (s, e) = range.split_once(':').ok_or_else(bad)?;
            let start: u64 = s.trim().parse().map_err(|_| bad())?;
            let end: u64 = e.trim().parse().map_err(|_| bad())?;
            if end <= start {
                return Err(Error::config("periods", format!("{item:?} is empty")));
            }
            Ok(Period::new(name, start, end))
        })
        .collect()
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    if args.traces.len() != 2 {
        return Err(Error::config("trace", format!("expected two traces, got {}", args.traces.len())));
    }
    if args.windows.contains(&0) {
        return Err(Error::config("W", "window lengths must be ≥ 1"));
    }
    let periods = match &args.periods {
        Some(s) => parse_periods(s)?,
        None => diffctl::io::AnalysisConfig::default().periods,
    };
    let target = match args.target {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(_) => return Err(Error::config("target", "must be positive")),
        None => diffctl::ethereum_target_block_time()?,
    };
    let a = load_chain_csv(&args.traces[0])?;
    let b = load_chain_csv(&args.traces[1])?;
    let cmp = compare_traces(&a, &b, &periods, &args.windows, target)?;
    for p in &cmp.periods {
        info!(
            "{}: mse reduced by {:.2}%, mean gap {:.3}%",
            p.name, p.mse_reduction_percent, p.mean_gap_percent
        );
    }
    emit(&args.out, &cmp)
}

fn replicate(args: ReplicateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<ReplicationConfig>(p)?,
        None if args.quick => ReplicationConfig::quick(),
        None => ReplicationConfig::default(),
    };
    if args.quick && args.config.is_some() {
        cfg.scale = 10;
    }
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    cfg.validate()?;
    let model = args.model.as_deref().map(MlpModel::load).transpose()?;
    if model.is_none() {
        info!("training classifier ({} samples per class)", cfg.training.samples_per_class);
    }
    let rep = run_replication(&cfg, model)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    rep.write(&args.out)?;
    let r = &rep.report;
    println!("amplitude ratio {:.4} (≈ 99/π = {:.4})", r.amplitude.ratio_with_table_arctan, r.amplitude.rounded_99_over_pi);
    for p in &r.periods {
        println!(
            "{}: mean {:.6e} vs {:.6e} (gap {:.3}%), mse reduced by {:.2}%",
            p.name, p.original.mean_difficulty, p.proposed.mean_difficulty, p.mean_gap_percent, p.mse_reduction_percent
        );
    }
    for w in &r.abnormal {
        println!(
            "{}: mean |dD/D| {:.3e} vs {:.3e}, mean I {:?}",
            w.name, w.original_mean_relative_change, w.proposed_mean_relative_change, w.proposed_mean_indicator
        );
    }
    Ok(())
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Replicate(a) => replicate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
