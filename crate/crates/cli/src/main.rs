mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{one_line, CliError, Overrides};

/// Train, run and evaluate a-contrario small-object segmentation networks.
#[derive(Debug, Parser)]
#[command(name = "dnfa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest
    Generate,
    /// Train a network and keep the best checkpoint
    Train,
    /// Write score maps (and optionally significance maps) for images
    Infer {
        /// Image file or manifest to run on
        #[arg(long)]
        input: Option<String>,
        /// Dump raw significance maps as well
        #[arg(long)]
        significance: bool,
    },
    /// Compute object, pixel and calibration metrics
    Eval {
        /// Directory of score PNGs to evaluate instead of a checkpoint
        #[arg(long)]
        scores: Option<String>,
    },
    /// Train and evaluate the whole ablation matrix
    Ablate,
    /// Calibration histograms before and after re-scoring with a new slope
    Calibrate,
    /// Tabulate NFA and significance against distance for a Gaussian
    NfaCurve,
    /// Run the epsilon-meaningfulness check and the gradient checks
    Check,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Calibrate => "calibrate",
            Command::NfaCurve => "nfa-curve",
            Command::Check => "check",
        }
    }
}

fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.code;
        }
        if let Some(c) = cause.downcast_ref::<nfa_core::Error>() {
            return c.code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "internal"
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::RunConfig::load(cli.overrides.config.as_deref())?;
    cli.overrides
        .apply(&mut cfg, matches!(cli.command, Command::Calibrate));
    let name = cli.command.name();
    match cli.command {
        Command::Infer { input, significance } => {
            if input.is_some() {
                cfg.infer.input = input;
            }
            cfg.infer.significance |= significance;
        }
        Command::Eval { scores }
            if scores.is_some() => {
                cfg.eval.scores = scores;
            }
        _ => {}
    }
    commands::dispatch(name, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", error_code(&e), one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
