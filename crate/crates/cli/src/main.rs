//! `physiossl` command-line pipeline.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use physiossl::{AblationKind, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "physiossl", version, about = "Self-supervised representation learning for wrist physiological signals")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run seed; also seeds the synthetic generator. Overrides the config file.
    #[arg(long, global = true, env = "PHYSIOSSL_SEED")]
    pub seed: Option<u64>,
    /// TOML run configuration merged over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; every file a command writes goes below it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Config override such as `pretrain.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Task id from the manifest; defaults to `eval.task` or the only task.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Frozen,
    Finetuned,
    Scratch,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Frozen => TrainMode::Frozen,
            Mode::Finetuned => TrainMode::Finetuned,
            Mode::Scratch => TrainMode::Scratch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Loso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Fusion,
    ModalitySubset,
    MissingModality,
    ComponentsPe,
    TransformSubset,
}

impl From<Kind> for AblationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fusion => AblationKind::Fusion,
            Kind::ModalitySubset => AblationKind::ModalitySubset,
            Kind::MissingModality => AblationKind::MissingModality,
            Kind::ComponentsPe => AblationKind::ComponentsPe,
            Kind::TransformSubset => AblationKind::TransformSubset,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        blocks_per_class: Option<usize>,
    },
    /// Filter, resample, normalise and window a dataset.
    Preprocess {
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Materialise the transformation-recognition dataset.
    BuildPretext {
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Pretrain the encoder on transformation recognition.
    Pretrain {
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Train an emotion classifier on every labelled window.
    Train {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Pretrained checkpoint, required unless the mode is scratch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Cross-subject evaluation.
    Evaluate {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, value_enum, default_value = "loso")]
        protocol: Protocol,
        /// Defaults to `eval.mode`.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Ablation study; pretrains each variant unless the mode is scratch.
    Ablate {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Unlabelled corpus for pretraining; defaults to the evaluation dataset.
        #[arg(long)]
        pretext_dataset: Option<PathBuf>,
    },
    /// LOSO with per-class subsampled training sets.
    Lowdata {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::BuildPretext { .. } => "build-pretext",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Lowdata { .. } => "lowdata",
        }
    }
}

/// 1 for anything the user can fix in flags, config or manifest; 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|c| {
        c.downcast_ref::<physiossl::Error>().is_some_and(|e| e.is_config_error())
            || c.downcast_ref::<commands::UsageError>().is_some()
    });
    if config {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
