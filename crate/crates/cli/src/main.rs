//! `logitfix`: train a classifier, attack it, train and evaluate logits
//! correction defenders, and analyse them.
//!
//! Every command writes its outputs and a `manifest.txt` into `--out`.
//! Settings come from flags, then from the `--config` file, then defaults.
//! Failures print one `error[kind]: message` line on stderr and exit 1.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "logitfix", version, about = "Logits-level adversarial defense workbench")]
pub struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the target classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Attack a dataset; writes outcomes, a summary and the logits store.
    Attack(AttackArgs),
    /// Attack a dataset and write only the logits store and summary.
    BuildLogits(AttackArgs),
    /// Train a logits-correction defender on a logits store.
    TrainDefender(TrainDefenderArgs),
    /// Clean / adversarial accuracy with and without a defender.
    Evaluate(EvaluateArgs),
    /// Cross-attack accuracy of several defenders.
    TransferMatrix(TransferArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// IDX images file (optionally gzipped).
    #[arg(long)]
    pub data: PathBuf,
    /// IDX labels file; defaults to the sibling `*-labels-idx1-*` file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out IDX images to report accuracy on.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// mlp-2h or cnn-small.
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Classifier checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// fgsm, pgd, mim, deepfool or cw.
    #[arg(long)]
    pub attack: Option<String>,
    /// desk-mnist or paper-imagenet.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f32>,
    #[arg(long)]
    pub step_size: Option<f32>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Any attack setting as key=value (e.g. cw.lr=0.05).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Attack only the first N examples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Keep at most N correctly classified examples per class.
    #[arg(long)]
    pub select_per_class: Option<usize>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainDefenderArgs {
    #[arg(long)]
    pub logits: PathBuf,
    /// Classifier checkpoint the store must have come from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// desk (default) or paper.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub keep: Option<f32>,
    #[arg(long)]
    pub clean_prob: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// two-layer or single-layer.
    #[arg(long)]
    pub depth: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub defender: PathBuf,
    #[arg(long)]
    pub logits: PathBuf,
    /// Label for the evaluated set, e.g. full or selected.
    #[arg(long)]
    pub set_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// ATTACK=checkpoint, once per defender.
    #[arg(long = "defender", value_name = "ATTACK=PATH", required = true)]
    pub defenders: Vec<String>,
    /// ATTACK=store, once per attack.
    #[arg(long = "logits", value_name = "ATTACK=PATH", required = true)]
    pub logits: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-image top-n support scores and their corpus frequencies.
    SupportingClasses(SupportArgs),
    /// Bhattacharyya coefficients between support frequency tables.
    Bhattacharyya(BhattacharyyaArgs),
    /// Corrected accuracy after lowering supporting-class logits.
    Knockout(KnockoutArgs),
    /// Histogram of per-image mean logits, clean versus adversarial.
    LogitsHist(HistArgs),
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    #[arg(long)]
    pub defender: PathBuf,
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    /// support, jacobian or negative-mean.
    #[arg(long)]
    pub ranking: Option<String>,
}

#[derive(Debug, Args)]
pub struct BhattacharyyaArgs {
    /// NAME=support_frequencies.csv, at least twice.
    #[arg(long = "support", value_name = "NAME=PATH", required = true)]
    pub supports: Vec<String>,
}

#[derive(Debug, Args)]
pub struct KnockoutArgs {
    #[arg(long)]
    pub defender: PathBuf,
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub delta: Option<f32>,
    /// Comma-separated classes; discovered from the defender when omitted.
    #[arg(long)]
    pub classes: Option<String>,
    /// Number of supporting classes to discover.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub ranking: Option<String>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match commands::run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
