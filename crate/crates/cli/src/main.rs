use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use transportlab_cli::commands;
use transportlab_cli::config::load_config;

#[derive(Parser)]
#[command(name = "transportlab", version, about = "Transport predictions from a labeled source population to an unlabeled target")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set bart.n_trees=50`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source and target data.
    Simulate(Common),
    /// Overlap weights, weighted BART, predictions, outliers and tree.
    Transport(Common),
    /// Cross-validated comparison of unweighted, weighted and target-trained fits.
    Cv(Common),
    /// Overlap scores and balancing weights only.
    Weights(Common),
    /// Flag low predictions in an existing predictions file.
    Outliers {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Fit the classification tree on the low-prediction label.
    Tree {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Predict new rows from a saved posterior.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    transportlab_cli::init_threads()?;
    let load = |c: &Common| load_config(c.config.as_deref(), &c.overrides);
    match &cli.command {
        Command::Simulate(c) => commands::simulate(&load(c)?),
        Command::Transport(c) => Ok(commands::transport(&load(c)?)?.files),
        Command::Cv(c) => commands::cv(&load(c)?),
        Command::Weights(c) => commands::weights(&load(c)?),
        Command::Outliers { common, predictions } => commands::outliers(&load(common)?, predictions.as_deref()),
        Command::Tree { common, predictions } => commands::tree(&load(common)?, predictions.as_deref()),
        Command::Predict { common, model, input } => commands::predict(&load(common)?, model, input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
