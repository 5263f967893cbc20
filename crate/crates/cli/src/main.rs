//! `vclip`: generate synthetic video data, build protocol splits, train,
//! evaluate, export embeddings and render reports.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vclip_core::Error;

#[derive(Debug, Parser)]
#[command(name = "vclip", version, about = "Dual-encoder video adaptation on synthetic clips")]
struct Cli {
    /// Default root for outputs when `--out` is not given.
    #[arg(long, env = "VCLIP_OUT", default_value = "vclip-out", global = true)]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset directory (manifest plus sample files).
    GenData(GenDataArgs),
    /// Write the split files of a protocol setting.
    MakeSplits(MakeSplitsArgs),
    /// Train a model and write a checkpoint plus its loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint and append the report to a results file.
    Eval(EvalArgs),
    /// Export pooled video embeddings of the validation split.
    ExportEmbeddings(ExportArgs),
    /// Render a results table and plots from a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct MakeSplitsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// zero_shot, base_to_novel, few_shot or fully_supervised.
    #[arg(long)]
    pub setting: String,
    /// Shots per class (few_shot).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero-shot target dataset; defaults to the source dataset.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated zero-shot target classes; defaults to all target classes.
    #[arg(long, value_delimiter = ',')]
    pub target_classes: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Restrict training to a split's classes and videos.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Split files; when omitted they are derived from `[protocol]`.
    #[arg(long, num_args = 1..)]
    pub splits: Vec<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Row label in reports; defaults to the checkpoint's last regime.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated classes to export; defaults to every dataset class.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for `results.jsonl` and `loss_curve.json`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for a failed command: 2 config/validation, 3 compatibility, 4 integrity.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Vocab(_) | Error::UnknownToken(_) => 3,
        Error::Integrity(_) => 4,
        Error::Config(_)
        | Error::Data(_)
        | Error::InvalidMode(_)
        | Error::EmptyClassSet
        | Error::TokenOverflow { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.out_root;
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a, &root),
        Command::MakeSplits(a) => commands::make_splits(&a, &root),
        Command::Train(a) => commands::train(&a, &root),
        Command::Eval(a) => commands::eval(&a, &root),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a, &root),
        Command::Report(a) => commands::report(&a, &root),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
