mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hres::train::TrainError;
use hres::TensorError;

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(
    name = "hres",
    version,
    about = "Residual CNN pipeline for histopathology patches"
)]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert PNG patches into seven-channel tensor files.
    Preprocess(commands::PreprocessArgs),
    /// Train a model with early stopping.
    Train(commands::TrainArgs),
    /// Report confusion matrix, per-class scores and AUROC.
    Eval(commands::EvalArgs),
    /// Write Grad-CAM heatmaps and overlays.
    Gradcam(commands::GradCamArgs),
    /// Print per-layer parameter and cost counts.
    Summary(commands::SummaryArgs),
    /// Generate a synthetic two-class dataset.
    Synth(commands::SynthArgs),
}

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

fn is_numeric_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<TrainError>()
            .is_some_and(TrainError::is_non_finite)
            || matches!(
                e.downcast_ref::<TensorError>(),
                Some(TensorError::NonFinite { .. })
            )
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    if !matches!(cli.command, Command::Synth(_)) {
        eprintln!("# resolved configuration");
        eprint!("{}", cfg.resolved_toml());
        eprintln!("# end configuration");
    }
    match &cli.command {
        Command::Preprocess(a) => commands::preprocess(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Gradcam(a) => commands::gradcam(a, &cfg),
        Command::Summary(a) => commands::summary(a, &cfg),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_numeric_failure(&e) {
                ExitCode::from(EXIT_NUMERIC)
            } else {
                ExitCode::from(EXIT_INPUT)
            }
        }
    }
}
