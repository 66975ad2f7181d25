//! `csifb` command-line front end.

mod commands;

use clap::{Args, Parser, Subcommand};
use csifb::config::CONFIG_ENV;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "csifb", version, about = "CQI-assisted CSI feedback simulation lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML); defaults are used when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.cqi_mode=none`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic channel dataset.
    GenData(commands::GenData),
    /// Train a model on a dataset.
    Train(commands::Train),
    /// Evaluate checkpoints over a list of feedback SNRs.
    Eval(commands::Eval),
    /// Estimate CQI entropy and I(H'; CQI).
    Analyze(commands::Analyze),
    /// Write normalized CSI features with CQI labels as CSV.
    ExportEmbeddings(commands::Export),
    /// Print the header of an SMC1 or SMCK file.
    Inspect(commands::Inspect),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Analyze(a) => commands::analyze(&cli.common, a),
        Command::ExportEmbeddings(a) => commands::export(&cli.common, a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
