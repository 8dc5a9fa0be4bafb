use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "td3net", version, about = "Multi-dilated temporal convolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AnalyzeMode {
    Rf,
    Blindspots,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CountFormat {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write log.csv, best.ckpt, final.ckpt and resolved-config.toml.
    Train {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the training config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Receptive fields or blind spots of every activation.
    Analyze {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        /// Restrict the report to one activation path.
        #[arg(long)]
        layer: Option<String>,
        /// Sequence length; defaults to the model's seq_len.
        #[arg(long)]
        seq_len: Option<usize>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and FLOP accounting.
    Count {
        #[arg(long)]
        model_config: PathBuf,
        /// Input shape as CHANNELSxFRAMES.
        #[arg(long, default_value = "512x29")]
        flops_input: String,
        #[arg(long, value_enum, default_value = "table")]
        format: CountFormat,
    },
    /// Per-frame L2 norm of the final backend features for every sample.
    Amap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and loss of a checkpoint on a feature file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Where to write the confusion matrix CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Write one split of the synthetic task described by a training config.
    Synth {
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Output file; `.csv` selects CSV, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { model_config, train_config, out, seed } => {
            commands::train(&model_config, &train_config, &out, seed)
        }
        Command::Analyze { model_config, mode, layer, seq_len, out } => {
            commands::analyze(&model_config, mode, layer.as_deref(), seq_len, out.as_deref())
        }
        Command::Count { model_config, flops_input, format } => commands::count(&model_config, &flops_input, format),
        Command::Amap { ckpt, features, out } => commands::amap(&ckpt, &features, &out),
        Command::Eval { ckpt, features, confusion } => commands::eval(&ckpt, &features, confusion.as_deref()),
        Command::Synth { train_config, split, out } => commands::synth(&train_config, split, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
