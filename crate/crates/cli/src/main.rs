//! `interseq`: one binary, one subcommand per pipeline stage.

mod data;
mod learn;
mod online;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interseq::Error;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "interseq", version, about = "Fraud scoring over interleaved per-entity event sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event file and its schema.
    Gen(data::GenArgs),
    /// Fit or apply the preprocessing pipeline.
    #[command(subcommand)]
    Prep(PrepCommand),
    /// Build the per-entity sequence file.
    BuildSeq(data::BuildSeqArgs),
    /// Train a model from a job file.
    Train(learn::TrainArgs),
    /// Score every event of a sequence file.
    ScoreBatch(learn::ScoreBatchArgs),
    /// Score a live event stream with persisted per-entity state.
    Serve(online::ServeArgs),
    /// Paced latency benchmark of the streaming path.
    Bench(online::BenchArgs),
    /// Business metrics for a score file.
    Eval(learn::EvalArgs),
    /// Expire idle or over-budget entities from a state store.
    Expire(online::ExpireArgs),
    /// Rewrite a state store keeping only live records.
    Compact(online::CompactArgs),
}

#[derive(Subcommand)]
enum PrepCommand {
    /// Fit transforms on training events.
    Fit(data::PrepFitArgs),
    /// Transform events into feature vectors.
    Apply(data::PrepApplyArgs),
}

/// Shared `--config` flag.
#[derive(Args, Clone, Default)]
pub struct ConfigArg {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Reads a TOML document, or the type's defaults without a path.
pub fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// One exit code per error class; 2 is left to usage errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Config(_) => 4,
        Error::Schema(_) => 5,
        Error::Prep(_) => 6,
        Error::Seq(_) => 7,
        Error::Model(_) => 8,
        Error::Train(_) => 9,
        Error::Metrics(_) => 10,
        Error::Store(_) => 11,
        Error::Stream(_) => 12,
        Error::Gen(_) => 13,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(a) => data::gen(a),
        Command::Prep(PrepCommand::Fit(a)) => data::prep_fit(a),
        Command::Prep(PrepCommand::Apply(a)) => data::prep_apply(a),
        Command::BuildSeq(a) => data::build_seq(a),
        Command::Train(a) => learn::train(a),
        Command::ScoreBatch(a) => learn::score_batch(a),
        Command::Eval(a) => learn::eval(a),
        Command::Serve(a) => online::serve(a),
        Command::Bench(a) => online::bench(a),
        Command::Expire(a) => online::expire(a),
        Command::Compact(a) => online::compact(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
