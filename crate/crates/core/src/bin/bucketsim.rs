use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bucketsim::harness::{self, HarnessError, RunConfig};

/// Occupancy-sized ligand bucketing and pipeline throughput experiments.
#[derive(Parser, Debug)]
#[command(name = "bucketsim", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the dataset seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep points (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ligand record file
    Gen,
    /// Cluster a record file into occupancy-sized buckets
    Bucketize {
        /// Ligand record file (`id,n_atoms,n_rotamers` per line)
        #[arg(long)]
        input: PathBuf,
    },
    /// Throughput versus bucket size for one replicated ligand
    Trace {
        /// Write per-point event timelines
        #[arg(long)]
        timeline: bool,
    },
    /// Throughput speedup over a grid of atom/rotamer cluster counts
    Heatmap {
        /// Ligand record file; the configured synthetic set when omitted
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.common.out {
        cfg.output_dir = out;
    }
    let jobs = cli.common.jobs;
    match cli.command {
        Command::Gen => {
            harness::cmd_gen(&cfg)?;
        }
        Command::Bucketize { input } => {
            harness::cmd_bucketize(&cfg, &input, io::stdout().lock())?;
        }
        Command::Trace { timeline } => {
            cfg.timeline |= timeline;
            harness::with_jobs(jobs, || harness::cmd_trace(&cfg))??;
        }
        Command::Heatmap { input } => {
            harness::with_jobs(jobs, || harness::cmd_heatmap(&cfg, input.as_deref()))??;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
