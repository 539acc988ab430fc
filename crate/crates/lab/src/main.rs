use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffpace::commands::{Session, SweepKind};
use diffpace::config::ExperimentConfig;
use diffpace::{LabError, Result};

#[derive(Parser)]
#[command(
    name = "diffpace",
    version,
    about = "Diffusion-prior channel estimation experiments"
)]
struct Cli {
    /// Experiment configuration (TOML). Without it the desk defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Debug logging; estimation commands also write per-step diagnostics.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the channel dataset.
    GenDataset,
    /// Train the denoiser on the dataset.
    Train,
    /// Estimate with the trained model at the configured SNRs.
    Estimate,
    /// Compare all configured methods at the configured SNRs.
    Benchmark,
    /// Sweep SNR, pilot ratio, step count, or evaluate a scenario shift.
    Sweep {
        #[arg(value_enum)]
        kind: Kind,
    },
    /// Grid-search the solver weights on validation trials.
    Gridsearch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Snr,
    Alpha,
    Steps,
    Shift,
}

impl From<Kind> for SweepKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Snr => SweepKind::Snr,
            Kind::Alpha => SweepKind::Alpha,
            Kind::Steps => SweepKind::Steps,
            Kind::Shift => SweepKind::Shift,
        }
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml("")?,
    };
    if let Some(s) = cli.seed {
        if s > i64::MAX as u64 {
            return Err(LabError::Config(format!(
                "--seed must be at most {}",
                i64::MAX
            )));
        }
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(LabError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(e.to_string()))?;
    }
    let session = Session {
        cfg,
        force: cli.force,
        diagnostics: cli.verbose,
    };
    match cli.command {
        Command::GenDataset => session.gen_dataset(),
        Command::Train => session.train(),
        Command::Estimate => session.estimate(),
        Command::Benchmark => session.benchmark(),
        Command::Sweep { kind } => session.sweep(kind.into()),
        Command::Gridsearch => session.gridsearch(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
