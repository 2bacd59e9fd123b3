//! `hlog`: end-to-end pipeline over hierarchical log records — vocabulary,
//! training, evaluation, synthetic-anomaly detection, embedding export,
//! and accounting reports. Every subcommand prints one JSON document to
//! stdout; logs go to stderr, artifacts to the chosen output paths.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hlogformer::ErrorCategory;

#[derive(Parser)]
#[command(
    name = "hlog",
    version,
    about = "Hierarchical log transformer: training, detection, and reports"
)]
struct Cli {
    /// Overwrite existing artifact files.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a JSONL corpus
    BuildVocab {
        /// Corpus path (one JSON record per line; '#' lines skipped)
        corpus: PathBuf,
        /// Drop tokens seen fewer than this many times
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        /// Output vocabulary file (one token per line)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, metrics, and splits
    Train {
        /// Run configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Processing mode: hlog, flat, forward-only, or no-summary
        #[arg(long)]
        mode: Option<String>,
        /// Output directory (overrides the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config value, e.g. --set train.epochs=5
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Mean masked-token loss of a checkpoint over a data file
    EvalMlm {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Mask-draw seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a value-mismatched corpus beside the source
    GenFake {
        #[arg(long)]
        data: PathBuf,
        /// Per-leaf mismatch probability
        #[arg(long, default_value_t = 0.2)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path (default: <data>.fake.jsonl)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score real and fake sets; sweep fake-rate thresholds
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Candidate-set size
        #[arg(long, default_value_t = 10)]
        t: usize,
        /// Comma-separated threshold sweep (default 0,0.05,..,1)
        #[arg(long)]
        alpha_grid: Option<String>,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        /// Report directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Write record summaries to CSV (record_id,label,dim_0..)
    ExportEmbeddings {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional labels CSV (record_id,label); default label "real"
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an embeddings CSV onto principal components
    Pca {
        /// Embeddings CSV from export-embeddings
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear probe on record summaries
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Labels CSV (record_id,label)
        #[arg(long)]
        labels: PathBuf,
        /// Split seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe training epochs
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision@K over each user's held-out purchases
    Recommend {
        #[arg(long)]
        ckpt: PathBuf,
        /// Item corpus (JSONL); line numbers define item record ids
        #[arg(long)]
        items: PathBuf,
        /// User histories (JSONL: {"user":..,"items":[record ids]})
        #[arg(long)]
        histories: PathBuf,
        /// Comma-separated K values
        #[arg(long, default_value = "1,3,5,8,10")]
        k_list: String,
        /// Negative-sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact parameter counts for the configured model
    ParamCount {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Attention-cost table: windowed full attention vs segment windows
    MemReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Segment chunk cap (default: max_window - 2 * summary_slots)
        #[arg(long)]
        max_segment_len: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against central differences
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        probes: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Emit a bundled synthetic corpus
    GenCorpus {
        /// Corpus family: logs or copurchase
        #[arg(long, default_value = "logs")]
        kind: String,
        #[arg(long, default_value_t = 500)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command, cli.force) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.result).unwrap());
            ExitCode::from(outcome.exit_code)
        }
        Err(err) => {
            let category = err.category();
            let payload = serde_json::json!({
                "error": {
                    "category": format!("{category:?}").to_lowercase(),
                    "message": err.to_string(),
                }
            });
            println!("{}", serde_json::to_string_pretty(&payload).unwrap());
            let code = match category {
                ErrorCategory::Config => 2,
                ErrorCategory::Data | ErrorCategory::Io => 3,
                ErrorCategory::Numeric => 4,
            };
            ExitCode::from(code)
        }
    }
}
