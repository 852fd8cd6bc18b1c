//! `panoptic`: synthetic data, training, inference, post-processing, tuning
//! and evaluation for panoptic nuclei segmentation.

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panoptic_core::Error;

use config::PipelineConfig;

/// Exit codes: 0 success, 1 other failure, 2 configuration, 3 input/output,
/// 4 numerical divergence.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InfeasibleDensity { .. } => 2,
        Error::Io { .. }
        | Error::Image(_)
        | Error::BadMagic(_)
        | Error::UnknownDtype(_)
        | Error::Truncated { .. }
        | Error::DimsOverflow(_)
        | Error::DtypeMismatch { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(name = "panoptic", version, about = "Panoptic nuclei segmentation pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads; overrides the config and PANOPTIC_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic tiles with exact ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write three-label and center-vector targets for every tile.
    EncodeTargets {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-image class occupancy and sampling probabilities as CSV.
    SampleStats {
        #[arg(long)]
        data: PathBuf,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model; writes a checkpoint, the training log and the class prior.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation tiles for checkpoint selection.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict probability planes, with test-time augmentation.
    Infer {
        /// Checkpoint or training output directory. Repeat to ensemble.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn probability planes into labeled instances.
    Postprocess {
        #[arg(long)]
        probs: PathBuf,
        /// Parameters written by `tune`; replaces the [postprocess] section.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search post-processing thresholds against ground truth.
    Tune {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted instances against ground truth (PQ+ and R²).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write metrics.csv and metrics.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn thread_count(cli: Option<usize>, cfg: usize) -> Result<Option<usize>, Error> {
    if let Some(n) = cli.filter(|&n| n > 0) {
        return Ok(Some(n));
    }
    if cfg > 0 {
        return Ok(Some(cfg));
    }
    match std::env::var("PANOPTIC_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse::<usize>().map(|n| (n > 0).then_some(n)).map_err(|_| Error::Config(format!("PANOPTIC_THREADS={v} is not a thread count")))
        }
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads, cfg.threads)? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth { out } => commands::synth(&cfg, out),
        Command::EncodeTargets { data, out } => commands::encode_targets(&cfg, data, out.as_deref().unwrap_or(data)),
        Command::SampleStats { data, out } => {
            print!("{}", commands::sample_stats(&cfg, data, out.as_deref())?);
            Ok(())
        }
        Command::Train { data, val, out } => commands::train(&cfg, data, val.as_deref(), out),
        Command::Infer { checkpoints, data, out } => commands::infer(&cfg, checkpoints, data, out),
        Command::Postprocess { probs, params, out } => commands::postprocess(&cfg, probs, params.as_deref(), out),
        Command::Tune { probs, gt, out } => commands::tune(&cfg, probs, gt, out),
        Command::Evaluate { pred, gt, out } => {
            print!("{}", commands::evaluate(&cfg, pred, gt, out.as_deref())?);
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
