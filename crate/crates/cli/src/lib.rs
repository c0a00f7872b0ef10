//! The `metatrend` command line: argument parsing, configuration and the
//! subcommands that move artifacts through the work directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use metatrend::finetune::RunMode;
use metatrend::nn::Arch;
use metatrend::synth::{self, Family, SynthSpec};
use metatrend::tensor::NormPolicy;

use crate::commands::Ctx;
use crate::config::RunConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "metatrend",
    version,
    about = "Meta-learned short-term stock trend prediction"
)]
pub struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Universe manifest (`universe.json`), overriding `data.universe`.
    #[arg(long, global = true, value_name = "FILE")]
    pub universe: Option<PathBuf>,
    /// Artifact directory, overriding `data.workdir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub workdir: Option<PathBuf>,
    /// Worker threads; 1 gives bit-exact reruns of every step.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every stock: writes labels/labels_<stock>.csv.
    Label,
    /// Per-year quartiles of the band-width ratio: writes sigma_ratio.json.
    SigmaRatio,
    /// Indicator features: writes features/features_<stock>.csv.
    Features,
    /// Windowed, normalized training examples: writes datasets/<stock>.{json,csv,bin}.
    Dataset {
        /// Normalization policy, overriding `normalization`.
        #[arg(long, value_parser = parse::<NormPolicy>)]
        norm: Option<NormPolicy>,
    },
    /// Meta-train the shared initialization: writes meta/<arch>/phi.params and meta_loss.csv.
    MetaTrain {
        /// fcn, resnet or tcn; defaults to `arch`.
        #[arg(long, value_parser = parse::<Arch>)]
        arch: Option<Arch>,
    },
    /// Walk-forward fine-tuning: writes runs/<run>/predictions_<run>.csv and manifest.json.
    Finetune {
        /// ind, uni, meta-ind or meta-uni; defaults to `mode`.
        #[arg(long, value_parser = parse::<RunMode>)]
        mode: Option<RunMode>,
        /// fcn, resnet or tcn; defaults to `arch`.
        #[arg(long, value_parser = parse::<Arch>)]
        arch: Option<Arch>,
    },
    /// Classification metrics: writes metrics.json and comparison.csv.
    Evaluate {
        /// Run name such as Meta-Ind-TCN; repeatable. Every finished run when omitted.
        #[arg(long = "run", value_name = "RUN")]
        runs: Vec<String>,
        /// Also write metrics_monthly.json with one block per test month.
        #[arg(long)]
        per_month: bool,
    },
    /// Trade on predicted signals: writes backtest/equity_<run>.csv, trades_<run>.csv and comparison tables.
    Backtest {
        /// Run name such as Meta-Ind-TCN; repeatable. Every finished run when omitted.
        #[arg(long = "run", value_name = "RUN")]
        runs: Vec<String>,
    },
    /// Every step from labels to backtest for one mode/arch pair.
    RunAll {
        /// ind, uni, meta-ind or meta-uni; defaults to `mode`.
        #[arg(long, value_parser = parse::<RunMode>)]
        mode: Option<RunMode>,
        /// fcn, resnet or tcn; defaults to `arch`.
        #[arg(long, value_parser = parse::<Arch>)]
        arch: Option<Arch>,
    },
    /// Generate a synthetic universe (CSV files plus universe.json).
    Synth {
        /// Number of stocks.
        #[arg(long, default_value_t = 4)]
        stocks: usize,
        /// Trading days per stock.
        #[arg(long, default_value_t = 600)]
        days: usize,
        /// random-walk, pattern or single-peak.
        #[arg(long, default_value = "pattern", value_parser = parse::<Family>)]
        family: Family,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn parse<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(u) = &cli.universe {
        cfg.data.universe = Some(u.clone());
    }
    if let Some(w) = &cli.workdir {
        cfg.data.workdir = w.clone();
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Command::Synth {
        stocks,
        days,
        family,
        seed,
        out,
    } = &cli.command
    {
        let series = synth::generate(&SynthSpec::new(*stocks, *days, *family, *seed))?;
        let manifest = synth::write_universe(out, &series)?;
        log::info!("wrote {}", manifest.display());
        return Ok(());
    }
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Dataset { norm: Some(n) } => cfg.normalization = *n,
        Command::MetaTrain { arch } => cfg.arch = arch.unwrap_or(cfg.arch),
        Command::Finetune { mode, arch } | Command::RunAll { mode, arch } => {
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.arch = arch.unwrap_or(cfg.arch);
        }
        _ => {}
    }
    let ctx = Ctx::new(cfg)?;
    let (mode, arch) = (ctx.cfg.mode, ctx.cfg.arch);
    match &cli.command {
        Command::Label => commands::label(&ctx),
        Command::SigmaRatio => commands::sigma_ratio(&ctx),
        Command::Features => commands::features(&ctx),
        Command::Dataset { .. } => commands::dataset(&ctx),
        Command::MetaTrain { .. } => commands::meta_train_cmd(&ctx, arch),
        Command::Finetune { .. } => commands::finetune(&ctx, mode, arch).map(drop),
        Command::Evaluate { runs, per_month } => commands::evaluate(&ctx, runs, *per_month),
        Command::Backtest { runs } => commands::backtest(&ctx, runs),
        Command::RunAll { .. } => commands::run_all(&ctx, mode, arch),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

/// Runs one parsed invocation, inside a pool of `--threads` workers when
/// given.
pub fn run(cli: &Cli) -> CliResult<()> {
    match cli.threads {
        Some(0) => Err(CliError::Config {
            key: "--threads".into(),
            message: "must be at least 1".into(),
        }),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli))
        }
        _ => dispatch(cli),
    }
}
