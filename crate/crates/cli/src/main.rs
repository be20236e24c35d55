//! `vqp` — command-line front end over the core library.
//!
//! Every subcommand is a thin shell around a library call: identical inputs
//! through the CLI and the library produce identical outputs, and report
//! files contain no timestamps so re-runs are byte-identical.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use vqp_core::train::{CodebookInit, TrainConfig};
use vqp_core::vq::{CounterMode, ManipulateMode};

/// Environment variable consulted for the default output directory when
/// `--out` is not given; falls back to the current directory.
pub const OUT_DIR_ENV: &str = "VQP_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "vqp",
    version,
    about = "Vector-quantized prosody workbench",
    long_about = "Synthesizes corpora, extracts features, trains the \
                  vector-quantized prosody model, and produces evaluation \
                  and manipulation reports. Output files go to --out, the \
                  VQP_OUT_DIR environment variable, or the current directory."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: WAV files plus a factor-labelled manifest
    SynthData {
        /// Number of utterances
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Corpus random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract mel / MFCC / pitch features for every manifest entry
    Extract {
        /// Corpus manifest (TSV)
        #[arg(long)]
        manifest: PathBuf,
        /// Cepstral coefficients per frame (c0 included)
        #[arg(long, default_value_t = 14)]
        n_coeffs: usize,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the utterances of a manifest
    Train {
        /// Corpus manifest (TSV)
        #[arg(long)]
        manifest: PathBuf,
        /// Optimizer steps
        #[arg(long, default_value_t = TrainConfig::default().steps)]
        steps: usize,
        /// Learning rate
        #[arg(long, default_value_t = TrainConfig::default().lr)]
        lr: f64,
        /// Utterances per batch
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        /// Commitment weight of the quantizer loss
        #[arg(long, default_value_t = TrainConfig::default().beta)]
        beta: f64,
        /// Training seed (weights, codebook init, batch order)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Counter accumulation: "mean" (mean-then-abs) or "abs" (abs-then-mean)
        #[arg(long, default_value = "mean", value_parser = parse_counter_mode)]
        counter_mode: CounterMode,
        /// Codebook init: "data" (encoder frames) or "uniform" (random box)
        #[arg(long, default_value = "data", value_parser = parse_init)]
        init: CodebookInit,
        /// Also write model_step*.vqpc every N steps (0 = final only)
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Codebook-counter ranking table and SVG bar chart from a checkpoint
    CounterReport {
        /// Model checkpoint (.vqpc)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise GPE / FFE / MCD between reference and generated manifests
    Eval {
        /// Reference corpus manifest (TSV)
        #[arg(long)]
        reference: PathBuf,
        /// Generated corpus manifest (TSV); must cover every reference id
        #[arg(long)]
        generated: PathBuf,
        /// Align MCD frames with dynamic time warping instead of index pairing
        #[arg(long)]
        dtw: bool,
        /// Relative pitch tolerance for GPE/FFE
        #[arg(long, default_value_t = vqp_core::metrics::DEFAULT_GPE_TOLERANCE)]
        tolerance: f64,
        /// Cepstral coefficients per frame (c0 included, excluded from MCD)
        #[arg(long, default_value_t = 14)]
        n_coeffs: usize,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode sweeps of one latent dimension and plot the spectrograms
    Manipulate {
        /// Model checkpoint (.vqpc)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input WAV whose prosody latent is manipulated
        #[arg(long)]
        wav: PathBuf,
        /// Latent dimension to control (1-indexed)
        #[arg(long)]
        dim: usize,
        /// Comma-separated values, each within [-4, 4]
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// "override" writes each value into the dimension; "offset" adds it
        #[arg(long, default_value = "override", value_parser = parse_mode)]
        mode: ManipulateMode,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent/factor correlation and counter-attribution report
    Correlate {
        /// Model checkpoint (.vqpc)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus manifest (TSV) with factor labels
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (default: $VQP_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_counter_mode(s: &str) -> Result<CounterMode, String> {
    match s {
        "mean" => Ok(CounterMode::MeanThenAbs),
        "abs" => Ok(CounterMode::AbsThenMean),
        other => Err(format!("unknown counter mode {other:?} (expected \"mean\" or \"abs\")")),
    }
}

fn parse_init(s: &str) -> Result<CodebookInit, String> {
    s.parse().map_err(|e: vqp_core::VqpError| e.to_string())
}

fn parse_mode(s: &str) -> Result<ManipulateMode, String> {
    s.parse().map_err(|e: vqp_core::VqpError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match ops::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
