//! `tatumdrum`: synthetic data, language-model pretraining, transcriber
//! training, transcription, evaluation and attention export. Every
//! command writes into its own run directory.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use tatumdrum::config::{ExperimentConfig, LmChoice, ModelKind};
use tatumdrum::pipeline::{self, RunDir};
use tatumdrum::posenc::EncodingKind;
use tatumdrum::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tatumdrum", version, about = "Tatum-level drum transcription")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command; flags override the config file.
#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON, or TOML with a .toml extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this invocation.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Parent of automatically named run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_root: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    train_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    validation_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    test_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    lm_corpus: Option<PathBuf>,
    /// Directory of alternative `<name>.tatums.txt` files.
    #[arg(long, global = true)]
    tatums_dir: Option<PathBuf>,
    /// bigru or selfatt.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// none, standard or sync.
    #[arg(long, global = true)]
    encoding: Option<EncodingKind>,
    /// none, bigram, gru or mlm.
    #[arg(long, global = true)]
    lm: Option<LmChoice>,
    #[arg(long, global = true)]
    lm_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Weight of the language-model regularizer.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Stack `<name>.drums.wav` as a second feature channel.
    #[arg(long, global = true)]
    separated_drums: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired synthetic dataset (train and held-out pieces).
    SynthData,
    /// Train the configured language model on a score corpus.
    PretrainLm,
    /// Train a transcriber.
    Train,
    /// Transcribe recordings into score JSON and onset text.
    Transcribe {
        /// Transcriber checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of recordings; defaults to the test directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare estimated transcriptions with references.
    Evaluate {
        /// Directory of estimates (`<name>.score.json` or `.onsets.txt`).
        #[arg(long)]
        estimates: PathBuf,
        /// Directory of references; defaults to the test directory.
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Dump attention matrices and positional encodings with heatmaps.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Export only this piece.
        #[arg(long)]
        piece: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::PretrainLm => "pretrain-lm",
            Command::Train => "train",
            Command::Transcribe { .. } => "transcribe",
            Command::Evaluate { .. } => "evaluate",
            Command::ExportAttention { .. } => "export-attention",
        }
    }
}

fn build_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            tatumdrum::config::require_path(p, "config file")?;
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.data.train, &c.train_dir);
    set(&mut cfg.data.validation, &c.validation_dir);
    set(&mut cfg.data.test, &c.test_dir);
    set(&mut cfg.data.lm_corpus, &c.lm_corpus);
    set(&mut cfg.data.tatums, &c.tatums_dir);
    set(&mut cfg.lm_checkpoint, &c.lm_checkpoint);
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.model {
        cfg.model = m;
    }
    if let Some(e) = c.encoding {
        cfg.encoding = e;
    }
    if let Some(l) = c.lm {
        cfg.lm = l;
    }
    if let Some(e) = c.epochs {
        cfg.training.epochs = e;
    }
    if let Some(g) = c.gamma {
        cfg.training.gamma = g;
    }
    if c.separated_drums {
        cfg.separated_drums = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<S: serde::Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn paths_json(run: &Path, files: &[PathBuf]) -> serde_json::Value {
    serde_json::json!({ "run_dir": run, "files": files })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    // check inputs before creating the run directory
    match &cli.command {
        Command::Transcribe { checkpoint, .. } | Command::ExportAttention { checkpoint, .. } => {
            tatumdrum::config::require_path(checkpoint, "model checkpoint")?
        }
        Command::Evaluate { estimates, .. } => {
            tatumdrum::config::require_path(estimates, "estimate directory")?
        }
        _ => {}
    }
    let root = cli
        .common
        .run_dir
        .clone()
        .unwrap_or_else(|| RunDir::next_path(&cli.common.runs_root, cli.command.name()));
    let run = RunDir::create(&root, &cfg)?;
    log::info!("run directory {}", run.root().display());
    match &cli.command {
        Command::SynthData => print_json(&pipeline::synth_data_command(&cfg, &run)?),
        Command::PretrainLm => print_json(&pipeline::pretrain_lm_command(&cfg, &run)?),
        Command::Train => {
            let s = pipeline::train_command(&cfg, &run)?;
            println!("{}", s.train_metrics.to_table("train"));
            if let Some(v) = &s.validation_metrics {
                println!("{}", v.to_table("validation"));
            }
            println!("checkpoint {}", s.checkpoint.display());
            Ok(())
        }
        Command::Transcribe { checkpoint, input } => {
            let files = pipeline::transcribe_command(&cfg, &run, checkpoint, input.as_deref())?;
            print_json(&paths_json(run.root(), &files))
        }
        Command::Evaluate {
            estimates,
            references,
        } => {
            let refs = references
                .clone()
                .or_else(|| cfg.data.test.clone())
                .ok_or_else(|| {
                    Error::validation("evaluate needs --references or a test directory")
                })?;
            let report = pipeline::evaluate_command(&cfg, &run, estimates, &refs)?;
            println!("{}", report.to_table("total"));
            Ok(())
        }
        Command::ExportAttention {
            checkpoint,
            input,
            piece,
        } => {
            let files = pipeline::export_attention_command(
                &cfg,
                &run,
                checkpoint,
                input.as_deref(),
                piece.as_deref(),
            )?;
            print_json(&paths_json(run.root(), &files))
        }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
