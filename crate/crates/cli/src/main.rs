//! `signkd` command-line runs. Every subcommand reads one TOML config plus
//! `--set key=value` overrides and writes its artifacts under `output_dir`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "signkd", version, about = "Landmark sign recognition with distillation, correction and int8 export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
pub struct CorrectFlags {
    /// Use only the first correction stage.
    #[arg(long)]
    pub single: bool,
    /// Skip repeat collapsing and case folding before correction.
    #[arg(long)]
    pub no_preprocess: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/dev/test splits.
    Synth(Common),
    /// Write an augmented copy of a dataset.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the student without teacher streams.
    Train(Common),
    /// Train the student against teacher streams listed in the manifest.
    Distill(Common),
    /// Run a trained model over a manifest and store its output streams as a
    /// teacher for distillation.
    ExportTeacher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Word error rate of a model, or of a hypothesis manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["hyp", "reference"])]
        checkpoint: Option<PathBuf>,
        /// Int8 artifact to decode with instead of the float checkpoint.
        #[arg(long, requires = "checkpoint")]
        quantized: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        corrector: Option<PathBuf>,
        #[command(flatten)]
        flags: CorrectFlags,
        /// Manifest whose gloss column holds hypotheses.
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long, requires = "hyp")]
        reference: Option<PathBuf>,
    },
    /// Self-supervised pretraining of the two-stage corrector.
    PretrainCorrector {
        #[command(flatten)]
        common: Common,
        /// One clean gloss sentence per line; defaults to the synthetic grammar.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Correct gloss sentences, one per line.
    Correct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corrector: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        flags: CorrectFlags,
    },
    /// Calibrate and write the int8 model.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibration manifest; defaults to data.train.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Manifest for the float/int8 comparison; defaults to data.test.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Throughput of the float and int8 forward passes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        quantized: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Train(c) | Command::Distill(c) => c,
            Command::Augment { common, .. }
            | Command::ExportTeacher { common, .. }
            | Command::Eval { common, .. }
            | Command::PretrainCorrector { common, .. }
            | Command::Correct { common, .. }
            | Command::Quantize { common, .. }
            | Command::Bench { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    let cfg = match RunConfig::load(common.config.as_deref(), &common.overrides) {
        Ok(c) => c,
        Err(ConfigError::Read(msg)) => {
            eprintln!("error: cannot read config: {msg}");
            return ExitCode::from(2);
        }
        Err(ConfigError::Invalid(errs)) => {
            eprintln!("error: invalid config ({} problems)", errs.len());
            for e in errs {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
    };
    let result = commands::Run::start(cfg).and_then(|run| match cli.command {
        Command::Synth(_) => run.synth(),
        Command::Augment { input, .. } => run.augment(input),
        Command::Train(_) => run.train(false),
        Command::Distill(_) => run.train(true),
        Command::ExportTeacher { checkpoint, manifest, .. } => run.export_teacher(&checkpoint, manifest),
        Command::Eval {
            checkpoint,
            quantized,
            manifest,
            corrector,
            flags,
            hyp,
            reference,
            ..
        } => match (hyp, reference) {
            (Some(h), Some(r)) => run.eval_transcripts(&h, &r),
            _ => run.eval_model(checkpoint, quantized, manifest, corrector, &flags),
        },
        Command::PretrainCorrector { corpus, .. } => run.pretrain_corrector(corpus),
        Command::Correct {
            corrector, input, flags, ..
        } => run.correct(&corrector, &input, &flags),
        Command::Quantize {
            checkpoint,
            calibration,
            manifest,
            ..
        } => run.quantize(&checkpoint, calibration, manifest),
        Command::Bench {
            checkpoint,
            quantized,
            manifest,
            ..
        } => run.bench(&checkpoint, &quantized, manifest),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
