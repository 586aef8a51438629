//! `av2v`: synthetic corpus generation, vocabulary building, pre-training,
//! fine-tuning, embedding, indexing, querying and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use av2v::ErrorCategory;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "av2v", version, about = "Antivirus scan report embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Precedence: flag, then `AV2V_*`
/// environment variable, then config file, then built-in default.
#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true, env = "AV2V_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "AV2V_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "AV2V_WORKERS")]
    pub workers: Option<usize>,
    /// Embedding dimension.
    #[arg(long, global = true, env = "AV2V_DIM")]
    pub dim: Option<usize>,
    /// Neighbors per query.
    #[arg(long, global = true, env = "AV2V_K")]
    pub k: Option<usize>,
    /// DCI candidate budget per query.
    #[arg(long, global = true, env = "AV2V_BUDGET")]
    pub budget: Option<usize>,
    /// Pair-mining distance threshold.
    #[arg(long, global = true, env = "AV2V_THRESHOLD")]
    pub threshold: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with ground truth and artifacts.
    Gen {
        #[arg(long, env = "AV2V_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Parse and tokenize a corpus, printing summary statistics.
    IngestCheck {
        #[arg(long, env = "AV2V_REPORTS")]
        reports: Option<PathBuf>,
        #[arg(long, env = "AV2V_ROSTER")]
        roster: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count tokens and write the vocabulary and adaptive-softmax layout.
    Vocab {
        #[arg(long, env = "AV2V_REPORTS")]
        reports: Option<PathBuf>,
        #[arg(long, env = "AV2V_ROSTER")]
        roster: Option<PathBuf>,
        /// Maximum vocabulary size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        adaptive_out: Option<PathBuf>,
    },
    /// Pre-train on masked-token and masked-label prediction.
    Pretrain {
        #[arg(long, env = "AV2V_REPORTS")]
        reports: Option<PathBuf>,
        #[arg(long, env = "AV2V_ROSTER")]
        roster: Option<PathBuf>,
        #[arg(long, env = "AV2V_VOCAB")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on mined anchor/positive pairs.
    Finetune {
        #[arg(long, env = "AV2V_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "AV2V_REPORTS")]
        reports: Option<PathBuf>,
        #[arg(long, env = "AV2V_ROSTER")]
        roster: Option<PathBuf>,
        #[arg(long, env = "AV2V_ARTIFACTS")]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write one vector per training-eligible report.
    Embed {
        #[arg(long, env = "AV2V_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "AV2V_REPORTS")]
        reports: Option<PathBuf>,
        #[arg(long, env = "AV2V_ROSTER")]
        roster: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a DCI index over a vector store.
    Index {
        #[arg(long, env = "AV2V_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k nearest neighbors of stored reports.
    Query {
        #[arg(long, env = "AV2V_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(long, env = "AV2V_INDEX")]
        index: Option<PathBuf>,
        /// Report ids to query, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1-NN family accuracy and k-NN tag F1.
    EvalKnn {
        #[arg(long, env = "AV2V_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(long, env = "AV2V_TRUTH")]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-Means and complete-linkage clustering scores against families.
    EvalCluster {
        #[arg(long, env = "AV2V_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(long, env = "AV2V_TRUTH")]
        truth: Option<PathBuf>,
        /// Number of clusters (default: number of families).
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(c: ErrorCategory) -> u8 {
    match c {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Format => 4,
        ErrorCategory::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = e.category();
            eprintln!("error [{c}]: {e}");
            ExitCode::from(exit_code(c))
        }
    }
}
