// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use settings::Invalid;

#[derive(Parser)]
#[command(name = "syntrack", version, about = "Syntactic tracking: simulate GMTI scenarios, classify trajectories, check grammars")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario: detection stream, truth sidecar and manifest.
    Simulate(SimulateArgs),
    /// Track and classify a detection stream, or parse a mode string directly.
    Classify(ClassifyArgs),
    /// Check a grammar: violations, mean matrix, spectral radius.
    Validate(ValidateArgs),
    /// Compare Earley sentence probabilities with the inside oracle.
    Oracle(OracleArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Default)]
struct Common {
    /// Key-value config file, layered under the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any setting, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Built-in grammar name or grammar file.
    #[arg(long)]
    grammar: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scans_per_mode: Option<usize>,
    /// Two mirrored arcs with interleaved detections.
    #[arg(long)]
    pincer: bool,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tracker {
    Imm,
    Pf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Feedback {
    On,
    Off,
    /// Run with and without feedback; covariance.csv gets both columns.
    Both,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Detection stream, JSON lines or `.csv`.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Hard mode string parsed directly, bypassing the tracker, e.g. "b b"
    /// or "bb".
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, value_enum)]
    tracker: Option<Tracker>,
    #[arg(long, value_enum)]
    feedback: Option<Feedback>,
    /// Pruning offset in nats (negative), or `off`.
    #[arg(long, allow_hyphen_values = true)]
    prune: Option<String>,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
    /// Write the parser chart(s) as JSON lines.
    #[arg(long)]
    dump_chart: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Grammar file or built-in name.
    grammar: String,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    grammar: String,
    /// Terminal string, space separated or one character per terminal.
    #[arg(long)]
    modes: String,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory for the replayed run.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Simulate(a) => commands::simulate(a),
        Command::Classify(a) => commands::classify(a),
        Command::Validate(a) => commands::validate(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Replay(a) => commands::replay(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(commands::EXIT_INVALID)
            } else {
                ExitCode::from(commands::EXIT_RUNTIME)
            }
        }
    }
}
