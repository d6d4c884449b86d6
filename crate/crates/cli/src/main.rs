use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error(transparent)]
    Core(#[from] l96_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use l96_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::BlowUp(_) => 3,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                E::BlowUp { .. } | E::Diverged { .. } => 3,
                E::Io(_) | E::Format(_) | E::Json(_) => 4,
                E::Config(_) | E::Shape(_) | E::InsufficientData(_) | E::Singular(_) => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "l96", version, about = "Lorenz 96 truth runs, stochastic surrogates and their evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// JSON parameter block for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Multiplies every duration and count in the config.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the two-tier system and save one trajectory per forcing.
    GenTruth,
    /// Fit the cubic plus AR(1) model.
    FitPoly,
    /// Train the recurrent model; resumes from its checkpoint.
    TrainRnn,
    /// Free-running simulation of a saved model.
    Simulate,
    /// Weather, climate, likelihood and cost metrics.
    Evaluate,
    /// Operation counts per time step.
    Cost,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let res = std::fs::create_dir_all(&g.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", g.out.display())))
        .and_then(|_| match cli.command {
            Command::GenTruth => commands::gen_truth(g),
            Command::FitPoly => commands::fit_poly(g),
            Command::TrainRnn => commands::train_rnn(g),
            Command::Simulate => commands::simulate(g),
            Command::Evaluate => commands::evaluate(g),
            Command::Cost => commands::cost(g),
        });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("l96: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
