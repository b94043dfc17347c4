use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvlogit_cli::{error_json, run_pipeline, Command, Inputs};

/// Bayesian multivariate logistic regression for trials with several
/// binary outcomes.
#[derive(Parser)]
#[command(name = "mvlogit", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON configuration document for the command
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random stream; overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives the report files
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the regression and write posterior draws with diagnostics
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Transform draws into treatment effects and apply decision rules
    Decide {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Draws written by `fit`; the model is fitted afresh when omitted
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Required sample size per arm for a set of design targets
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Prior means from beliefs about success probabilities
    Elicit {
        #[command(flatten)]
        common: Common,
    },
    /// Run a simulation campaign
    Simulate {
        #[command(flatten)]
        common: Common,
        /// 1000 replications and 10000 stored iterations per chain
        #[arg(long)]
        full_scale: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, data) = match cli.command {
        Cmd::Fit { common, data } => (Command::Fit, common, Some(data)),
        Cmd::Decide { common, data, draws } => (Command::Decide { draws }, common, Some(data)),
        Cmd::Plan { common } => (Command::Plan, common, None),
        Cmd::Elicit { common } => (Command::Elicit, common, None),
        Cmd::Simulate { common, full_scale } => (Command::Simulate { full_scale }, common, None),
    };
    let inputs = Inputs {
        config: common.config,
        data,
        seed: common.seed,
        out: common.out,
    };
    match run_pipeline(&command, &inputs) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
