//! `tustin`: batch front end for dataset generation, training, grey-box
//! identification and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Procedure, SpringChoice};

#[derive(Debug, Parser)]
#[command(name = "tustin", version, about = "Tustin-Net and Euler-Lagrange models of a rotary pendulum")]
pub struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the generation and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Relative paths resolve under $TUSTIN_OUTPUT_ROOT when set.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Fixed-order reductions for bit-reproducible training.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic train/validation layout with its manifest.
    Generate,
    /// Writes stencil velocities and equilibrium-entry steps for each experiment.
    Prepare,
    /// Trains a Tustin-Net on the training split.
    Train {
        #[arg(long, value_enum)]
        procedure: Option<Procedure>,
        /// Reuse an existing pre-training checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Identifies Euler-Lagrange parameters on the training split.
    Identify {
        #[arg(long, value_enum)]
        spring: Option<SpringChoice>,
    },
    /// Free-run RMSE of each model on each experiment of the chosen split.
    Evaluate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
