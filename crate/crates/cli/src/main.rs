//! `gpc`: generate datasets, train and evaluate the count-penalized
//! actor-critic, inspect count tables, and run the verification suites.

mod config;
mod metrics;
mod train;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpc_core::count::{ingest_dataset, CellKey, CountSnapshot, CountTable, EncodingMode, GridSpec, StateMode};
use gpc_core::data::{generate_dataset, DataFormat, Tier, TransitionDataset};
use gpc_core::envs::make_env;
use gpc_core::sac::{evaluate, load_policy, normalized_score, reference_returns};
use gpc_core::verify;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gpc", version, about = "Grid-mapping pseudo-count offline actor-critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a behavior tier in an environment and save the transitions.
    GenData(GenDataArgs),
    /// Train on a dataset; writes config.toml, metrics.csv, timing.csv and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint's deterministic policy.
    Eval(EvalArgs),
    /// Print the count histogram, occupancy and most visited buckets.
    InspectCounts(InspectArgs),
    /// Run the oracle suites; exits nonzero naming the first failure.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, env = "GPC_ENV", default_value = "point-reach-2d")]
    env: String,
    #[arg(long, default_value = "medium")]
    tier: Tier,
    #[arg(long, default_value_t = 10_000)]
    size: usize,
    #[arg(long, env = "GPC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Inferred from the extension when omitted (`.bin` is binary).
    #[arg(long)]
    format: Option<DataFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Radix,
    #[value(name = "paper", alias = "weighted-sum")]
    WeightedSum,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateModeArg {
    Grid,
    Id,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long, env = "GPC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "GPC_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "GPC_ENV")]
    env: Option<String>,
    #[arg(long, env = "GPC_DATASET")]
    dataset: Option<PathBuf>,
    #[arg(long, env = "GPC_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "GPC_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "GPC_KAPPA")]
    kappa: Option<f64>,
    #[arg(long, env = "GPC_PARTITIONS")]
    partitions: Option<u32>,
    #[arg(long, env = "GPC_MARGIN")]
    margin: Option<u32>,
    #[arg(long, env = "GPC_BETA")]
    beta: Option<f64>,
    #[arg(long = "beta-next", env = "GPC_BETA_NEXT")]
    beta_next: Option<f64>,
    #[arg(long, env = "GPC_ENCODING")]
    encoding: Option<EncodingArg>,
    #[arg(long = "state-mode", env = "GPC_STATE_MODE")]
    state_mode: Option<StateModeArg>,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let t = &mut c.trainer;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.kappa {
            t.kappa = v;
        }
        if let Some(v) = self.partitions {
            t.partitions = v;
        }
        if let Some(v) = self.margin {
            t.margin = v;
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.beta_next {
            t.beta_next = v;
        }
        if let Some(v) = self.encoding {
            t.encoding = match v {
                EncodingArg::Radix => EncodingMode::Radix,
                EncodingArg::WeightedSum => EncodingMode::WeightedSum,
            };
        }
        if let Some(v) = self.state_mode {
            t.state_mode = match v {
                StateModeArg::Grid => StateMode::Grid,
                StateModeArg::Id => StateMode::Id,
            };
        }
        if let Some(v) = &self.env {
            c.env = v.clone();
        }
        if let Some(v) = &self.dataset {
            c.dataset = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        c.trainer.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "GPC_ENV", default_value = "point-reach-2d")]
    env: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, env = "GPC_SEED", default_value_t = 12345)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    /// A counts.json snapshot (e.g. from a checkpoint).
    #[arg(long, conflicts_with = "dataset")]
    counts: Option<PathBuf>,
    /// Count a dataset afresh on a grid built from it.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    partitions: u32,
    #[arg(long, default_value_t = 2)]
    margin: u32,
    #[arg(long, default_value = "radix")]
    encoding: EncodingArg,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let env = make_env(&args.env)?;
    let data = generate_dataset(env.as_ref(), args.tier, args.size, args.seed)?;
    let format = args.format.unwrap_or_else(|| DataFormat::from_path(&args.out));
    data.save(&args.out, format)?;
    let returns = data.episode_returns();
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    println!(
        "wrote {} transitions ({} episodes, mean return {mean:.3}) to {}",
        data.len(),
        returns.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let env = make_env(&args.env)?;
    let policy = load_policy(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let report = evaluate(&policy, env.as_ref(), args.episodes, args.seed)?;
    let refs = reference_returns(env.as_ref(), args.episodes, args.seed);
    println!("episodes {}", args.episodes);
    println!("mean_return {:.6}", report.mean_return);
    println!("normalized_score {:.3}", normalized_score(report.mean_return, refs));
    println!("reference_random {:.6}", refs.random);
    println!("reference_expert {:.6}", refs.expert);
    Ok(())
}

fn print_counts(out: &mut impl Write, grid: &GridSpec, table: &CountTable, top: usize) -> io::Result<()> {
    writeln!(out, "total {}", table.total())?;
    writeln!(out, "distinct {}", table.distinct())?;
    writeln!(
        out,
        "occupancy {:.6e} ({} of (M·G)^d = {:.6e})",
        table.distinct() as f64 / grid.cell_space(),
        table.distinct(),
        grid.cell_space()
    )?;
    writeln!(out, "histogram (count: buckets)")?;
    for (count, buckets) in table.histogram() {
        writeln!(out, "  {count}: {buckets}")?;
    }
    writeln!(out, "top {top}")?;
    for (key, n) in table.top_k(top) {
        match key {
            CellKey::Code(c) => writeln!(out, "  {c} {n}")?,
            CellKey::Digits(d) => writeln!(out, "  {d:?} {n}")?,
        }
    }
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    match (&args.counts, &args.dataset) {
        (Some(path), None) => {
            let snap = CountSnapshot::load(path)?;
            let grid = snap.grid.clone();
            writeln!(out, "epoch {} state_mode {:?}", snap.epoch, snap.state_mode)?;
            print_counts(&mut out, &grid, &snap.into_table()?, args.top)?;
        }
        (None, Some(path)) => {
            let data = TransitionDataset::load(path, DataFormat::from_path(path))?;
            let encoding = match args.encoding {
                EncodingArg::Radix => EncodingMode::Radix,
                EncodingArg::WeightedSum => EncodingMode::WeightedSum,
            };
            let grid = GridSpec::from_dataset(&data, args.partitions, args.margin, encoding)?;
            print_counts(&mut out, &grid, &ingest_dataset(&grid, &data, 1.0)?, args.top)?;
        }
        _ => bail!("give exactly one of --counts or --dataset"),
    }
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let reports = verify::run_all(args.seed)?;
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let aliasing: Vec<String> = verify::aliasing_mass(8, &[1, 2, 3], 0.25, 200_000, args.seed)
        .iter()
        .map(|a| format!("M={} {:.4}", a.margin, a.aliased_mass))
        .collect();
    println!("INFO aliased mass, Gaussian σ = width/4 around the data range: {}", aliasing.join(", "));
    if let Some(first) = reports.iter().find(|r| !r.passed) {
        eprintln!("verification failed: {}", first.name);
        return Ok(false);
    }
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(a) => gen_data(&a)?,
        Command::Train(a) => {
            let config = a.resolve()?;
            let rows = train::run(&config, a.resume.as_deref())?;
            let last = rows.iter().rev().find_map(|r| r.normalized_score);
            println!(
                "trained {} epochs into {}{}",
                rows.len(),
                config.out.display(),
                last.map_or(String::new(), |s| format!(", final normalized score {s:.1}"))
            );
        }
        Command::Eval(a) => eval(&a)?,
        Command::InspectCounts(a) => inspect(&a)?,
        Command::Verify(a) => return run_verify(&a),
    }
    Ok(true)
}

/// A reader such as `head` closing the pipe early is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

