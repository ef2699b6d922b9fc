//! Batch front end for the adaptation pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. All diagnostics
//! go to stderr; failures are printed as one line of JSON
//! (`{"error": "..."}`) so scripted callers can parse them. Progress
//! chatter is controlled by `EVDANCE_LOG=quiet|info|debug` (default info).

mod commands;
mod dataset;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "evdance",
    version,
    about = "Source-free adaptation of an image classifier to event streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic bar-sweep benchmark into a dataset directory.
    GenSynthetic(commands::GenSyntheticArgs),
    /// Write a text or visual feature bank for a dataset.
    GenFeatures(commands::GenFeaturesArgs),
    /// Convert one event stream file to a dense representation as JSON.
    Convert(commands::ConvertArgs),
    /// Train the source classifier on the dataset's labeled frames.
    PretrainSource(commands::PretrainSourceArgs),
    /// Train the event-to-frame reconstruction net on the train streams.
    PretrainRecon(commands::PretrainReconArgs),
    /// Run source-free adaptation from two pretrained checkpoints.
    Adapt(commands::AdaptArgs),
    /// Score a classifier checkpoint on the dataset's test split.
    Eval(commands::EvalArgs),
}

pub mod log {
    use std::sync::OnceLock;

    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    pub enum Level {
        Quiet,
        Info,
        Debug,
    }

    fn level() -> Level {
        static LEVEL: OnceLock<Level> = OnceLock::new();
        *LEVEL.get_or_init(|| match std::env::var("EVDANCE_LOG").as_deref() {
            Ok("quiet") => Level::Quiet,
            Ok("debug") => Level::Debug,
            _ => Level::Info,
        })
    }

    pub fn enabled(at: Level) -> bool {
        level() >= at
    }

    pub fn info(msg: impl std::fmt::Display) {
        if enabled(Level::Info) {
            eprintln!("{msg}");
        }
    }

    pub fn debug(msg: impl std::fmt::Display) {
        if enabled(Level::Debug) {
            eprintln!("{msg}");
        }
    }
}

fn emit_error(message: &str) {
    eprintln!("{}", serde_json::json!({ "error": message }));
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            emit_error(e.to_string().trim_end());
            return 2;
        }
    };
    let result = match &cli.command {
        Command::GenSynthetic(args) => commands::gen_synthetic(args),
        Command::GenFeatures(args) => commands::gen_features(args),
        Command::Convert(args) => commands::convert(args),
        Command::PretrainSource(args) => commands::pretrain_source_cmd(args),
        Command::PretrainRecon(args) => commands::pretrain_recon_cmd(args),
        Command::Adapt(args) => commands::adapt_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            emit_error(&format!("{e:#}"));
            1
        }
    }
}
