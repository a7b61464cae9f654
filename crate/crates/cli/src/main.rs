use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgmarl::{CliError, Command, ExperimentConfig, Run};

#[derive(Parser)]
#[command(name = "sgmarl", version, about = "Shape-guided multi-agent landmark detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Let `report` aggregate runs from different configurations.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate phantom images, construction shapes and scenario splits.
    GenData,
    /// Build the statistical shape model from the construction shapes.
    BuildSsm,
    /// Pretrain the shape regressor on model samples and calibrate its threshold.
    PretrainSsm,
    /// Train the navigation network jointly with the shape regressor.
    Train,
    /// Run detection with and without shape correction on every test level.
    Detect,
    /// Score the detections.
    Eval,
    /// Aggregate evaluation tables of one or more runs.
    Report {
        /// Run directories to aggregate; defaults to the output directory.
        runs: Vec<PathBuf>,
    },
    /// Run every stage from gen-data to eval.
    All,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::Config("no output directory (config key `out` or --out)".into()))?;
    let run = Run::new(config, out)?;
    match cli.command {
        Cmd::GenData => run.execute(Command::GenData, &[], cli.force),
        Cmd::BuildSsm => run.execute(Command::BuildSsm, &[], cli.force),
        Cmd::PretrainSsm => run.execute(Command::PretrainSsm, &[], cli.force),
        Cmd::Train => run.execute(Command::Train, &[], cli.force),
        Cmd::Detect => run.execute(Command::Detect, &[], cli.force),
        Cmd::Eval => run.execute(Command::Eval, &[], cli.force),
        Cmd::Report { runs } => run.execute(Command::Report, &runs, cli.force),
        Cmd::All => run.execute_all(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
