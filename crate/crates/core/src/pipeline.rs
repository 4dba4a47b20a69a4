//! Run-directory workflow behind the command-line tool: synthetic data,
//! language-model pretraining, transcriber training, transcription,
//! evaluation and attention export.
//!
//! A dataset directory holds, per piece `<name>`: `<name>.wav`, an optional
//! `<name>.drums.wav` stem, `<name>.tatums.txt`, and reference
//! annotations as `<name>.score.json` and/or `<name>.onsets.txt`.
//!
//! A run directory holds `config.json` (the effective configuration),
//! `checkpoints/`, `logs/`, `reports/` and command-specific outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrays::{ArrayData, ArrayFile};
use crate::config::{require_path, ExperimentConfig};
use crate::error::{Error, Result};
use crate::features::{features_from_wav, MelFeature};
use crate::langmodel::{corpus_perplexity, train_lm, LanguageModel, LmTrainReport};
use crate::metrics::{corpus_metrics, MetricsReport, PieceEval, TOLERANCE};
use crate::posenc::PositionalEncoding;
use crate::score::{
    load_onsets, quantize_onsets, save_onsets, DrumScore, OnsetEvent, TatumGrid, FAR_TOLERANCE,
};
use crate::synth::synth_data;
use crate::training::{self, TrainReport, TrainingPiece};
use crate::transcriber::TranscriberModel;

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.safetensors";
pub const LM_FILE: &str = "lm.safetensors";
pub const TRAIN_LOG: &str = "train.jsonl";

/// One invocation's output directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory tree and snapshots `cfg`. An existing
    /// directory is reused only if it holds no previous run.
    pub fn create(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        if root.join(CONFIG_FILE).exists() {
            return Err(Error::validation(format!(
                "run directory already used: {}",
                root.display()
            )));
        }
        let run = RunDir {
            root: root.to_path_buf(),
        };
        for d in [
            run.root.clone(),
            run.checkpoints(),
            run.logs(),
            run.reports(),
        ] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        cfg.save(&run.root.join(CONFIG_FILE))?;
        Ok(run)
    }

    /// `<base>/<command>-NNN` with the first unused counter.
    pub fn next_path(base: &Path, command: &str) -> PathBuf {
        (1..)
            .map(|i| base.join(format!("{command}-{i:03}")))
            .find(|p| !p.exists())
            .expect("unbounded counter")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// A subdirectory, created on demand.
    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Piece names in `dir`: every `<name>.<suffix>` file, sorted.
fn names_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    require_path(dir, "directory")?;
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = file.strip_suffix(suffix) {
            if !stem.is_empty() && !stem.ends_with(".drums") {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// A recording with its tatum grid but no annotation.
#[derive(Clone, Debug)]
pub struct InputPiece {
    pub name: String,
    pub feature: MelFeature,
    pub grid: TatumGrid,
}

fn tatum_path(dir: &Path, tatums: Option<&Path>, name: &str) -> PathBuf {
    tatums.unwrap_or(dir).join(format!("{name}.tatums.txt"))
}

fn load_grid(dir: &Path, tatums: Option<&Path>, name: &str) -> Result<TatumGrid> {
    let p = tatum_path(dir, tatums, name);
    require_path(&p, "tatum file")?;
    TatumGrid::load_text(&p)
}

/// Loads every `<name>.wav` in `dir` with its tatums.
pub fn load_inputs(
    dir: &Path,
    tatums: Option<&Path>,
    separated_drums: bool,
) -> Result<Vec<InputPiece>> {
    let names = names_with_suffix(dir, ".wav")?;
    if names.is_empty() {
        return Err(Error::validation(format!(
            "no .wav files in {}",
            dir.display()
        )));
    }
    names
        .into_iter()
        .map(|name| {
            let wav = dir.join(format!("{name}.wav"));
            let drums = dir.join(format!("{name}.drums.wav"));
            if separated_drums {
                require_path(&drums, "separated drum track")?;
            }
            let feature = features_from_wav(&wav, separated_drums.then_some(drums.as_path()))?;
            let grid = load_grid(dir, tatums, &name)?;
            Ok(InputPiece {
                name,
                feature,
                grid,
            })
        })
        .collect()
}

/// Reference score and onsets of `name`: either file may be missing, the
/// other is derived from it on `grid`.
pub fn load_annotation(
    dir: &Path,
    name: &str,
    grid: &TatumGrid,
) -> Result<(DrumScore, Vec<OnsetEvent>)> {
    let score_path = dir.join(format!("{name}.score.json"));
    let onset_path = dir.join(format!("{name}.onsets.txt"));
    let onsets = onset_path
        .exists()
        .then(|| load_onsets(&onset_path))
        .transpose()?;
    let score = if score_path.exists() {
        DrumScore::load_json(&score_path)?
    } else if let Some(ev) = &onsets {
        quantize_onsets(ev, grid, FAR_TOLERANCE)?.0
    } else {
        return Err(Error::validation(format!(
            "no annotation for {name}: expected {} or {}",
            score_path.display(),
            onset_path.display()
        )));
    };
    if score.num_tatums() != grid.len() {
        return Err(Error::validation(format!(
            "{} has {} tatums but the grid has {}",
            score_path.display(),
            score.num_tatums(),
            grid.len()
        )));
    }
    let onsets = match onsets {
        Some(ev) => ev,
        None => score.render_onsets(grid)?,
    };
    Ok((score, onsets))
}

/// Loads an annotated dataset directory.
pub fn load_dataset(
    dir: &Path,
    tatums: Option<&Path>,
    separated_drums: bool,
) -> Result<Vec<TrainingPiece>> {
    load_inputs(dir, tatums, separated_drums)?
        .into_iter()
        .map(|p| {
            let (score, onsets) = load_annotation(dir, &p.name, &p.grid)?;
            Ok(TrainingPiece {
                name: p.name,
                feature: p.feature,
                grid: p.grid,
                score,
                onsets,
            })
        })
        .collect()
}

/// Every `*.score.json` in `dir`.
pub fn load_score_corpus(dir: &Path) -> Result<Vec<DrumScore>> {
    let names = names_with_suffix(dir, ".score.json")?;
    if names.is_empty() {
        return Err(Error::validation(format!(
            "no .score.json files in {}",
            dir.display()
        )));
    }
    names
        .iter()
        .map(|n| DrumScore::load_json(&dir.join(format!("{n}.score.json"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train_dir: PathBuf,
    pub held_out_dir: PathBuf,
    pub train_pieces: usize,
    pub held_out_pieces: usize,
}

/// Writes `cfg.synth.pieces` training pieces to `data/train` and
/// `cfg.synth_held_out` further pieces from the same pattern library to
/// `data/held_out`.
pub fn synth_data_command(cfg: &ExperimentConfig, run: &RunDir) -> Result<SynthSummary> {
    let mut spec = cfg.synth.clone();
    spec.seed = cfg.seed;
    let train_n = spec.pieces;
    spec.pieces += cfg.synth_held_out;
    let pieces = synth_data(&spec)?;
    let data = run.subdir("data")?;
    let train_dir = data.join("train");
    let held_out_dir = data.join("held_out");
    for d in [&train_dir, &held_out_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (i, p) in pieces.iter().enumerate() {
        p.save(if i < train_n {
            &train_dir
        } else {
            &held_out_dir
        })?;
    }
    let summary = SynthSummary {
        train_dir,
        held_out_dir,
        train_pieces: train_n,
        held_out_pieces: cfg.synth_held_out,
    };
    write_json(&run.reports().join("synth.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub scores: usize,
    pub perplexity: f64,
    pub training: LmTrainReport,
}

/// Trains the configured language model on `data.lm_corpus` (or the
/// training scores) and saves `checkpoints/lm.safetensors`.
pub fn pretrain_lm_command(cfg: &ExperimentConfig, run: &RunDir) -> Result<PretrainSummary> {
    let lm_cfg = cfg
        .lm_config()
        .ok_or_else(|| Error::validation("pretrain-lm needs lm = bigram, gru or mlm"))?;
    let dir = cfg
        .data
        .lm_corpus
        .as_ref()
        .or(cfg.data.train.as_ref())
        .ok_or_else(|| Error::validation("pretrain-lm needs data.lm_corpus or data.train"))?;
    let corpus = load_score_corpus(dir)?;
    let mut lm = LanguageModel::<f32>::from_config(lm_cfg, cfg.seed)?;
    let mut train_cfg = cfg.lm_training.clone();
    train_cfg.seed = cfg.seed;
    let report = train_lm(&mut lm, &corpus, &train_cfg)?;
    let checkpoint = run.checkpoints().join(LM_FILE);
    lm.save(&checkpoint)?;
    let scores: Vec<_> = corpus.iter().map(|s| lm.score(s)).collect();
    let summary = PretrainSummary {
        checkpoint,
        scores: corpus.len(),
        perplexity: corpus_perplexity(&scores),
        training: report,
    };
    write_json(&run.reports().join("lm.json"), &summary)?;
    Ok(summary)
}

/// Loads the configured language model checkpoint, checking its kind.
pub fn load_lm(cfg: &ExperimentConfig) -> Result<Option<LanguageModel<f32>>> {
    let Some(kind) = cfg.lm.kind() else {
        return Ok(None);
    };
    let path = cfg
        .lm_checkpoint
        .as_ref()
        .ok_or_else(|| Error::validation("lm is set but lm_checkpoint is missing"))?;
    require_path(path, "language model checkpoint")?;
    let lm = LanguageModel::<f32>::load(path)?;
    if lm.kind() != kind {
        return Err(Error::validation(format!(
            "{} holds a {:?} model, config asks for {kind:?}",
            path.display(),
            lm.kind()
        )));
    }
    Ok(Some(lm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub report: TrainReport,
    pub train_metrics: MetricsReport,
    pub validation_metrics: Option<MetricsReport>,
}

/// Trains a transcriber, logging to `logs/train.jsonl` and saving
/// `checkpoints/model.safetensors`.
pub fn train_command(cfg: &ExperimentConfig, run: &RunDir) -> Result<TrainSummary> {
    let train_dir = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::validation("train needs data.train"))?;
    let train_set = load_dataset(train_dir, None, cfg.separated_drums)?;
    let validation = match &cfg.data.validation {
        Some(d) => load_dataset(d, None, cfg.separated_drums)?,
        None => Vec::new(),
    };
    let lm = if cfg.training.gamma > 0.0 {
        load_lm(cfg)?
    } else {
        None
    };
    let model = TranscriberModel::<f32>::new(cfg.transcriber(), cfg.seed)?;
    let mut tcfg = cfg.training.clone();
    tcfg.seed = cfg.seed;
    let log_path = run.logs().join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = training::train(
        model,
        &train_set,
        &validation,
        lm.as_ref(),
        &tcfg,
        Some(&mut log),
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let checkpoint = run.checkpoints().join(MODEL_FILE);
    outcome.model.save(&checkpoint)?;
    let train_metrics = training::evaluate(&outcome.model, &train_set, tcfg.threshold)?;
    let validation_metrics = (!validation.is_empty())
        .then(|| training::evaluate(&outcome.model, &validation, tcfg.threshold))
        .transpose()?;
    let summary = TrainSummary {
        checkpoint,
        report: outcome.report,
        train_metrics,
        validation_metrics,
    };
    write_json(&run.reports().join("train.json"), &summary)?;
    Ok(summary)
}

fn load_model(path: &Path) -> Result<TranscriberModel<f32>> {
    require_path(path, "model checkpoint")?;
    TranscriberModel::load(path)
}

/// Transcribes every recording in `input` (default `data.test`) into
/// `transcriptions/<name>.score.json` and `<name>.onsets.txt`.
pub fn transcribe_command(
    cfg: &ExperimentConfig,
    run: &RunDir,
    model_path: &Path,
    input: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let model = load_model(model_path)?;
    let dir = input
        .or(cfg.data.test.as_deref())
        .ok_or_else(|| Error::validation("transcribe needs an input directory or data.test"))?;
    let inputs = load_inputs(dir, cfg.data.tatums.as_deref(), cfg.separated_drums)?;
    let out = run.subdir("transcriptions")?;
    let mut written = Vec::new();
    for p in &inputs {
        let phi = model.predict(&p.feature, &p.grid)?;
        let score = crate::score::binarize(&phi, cfg.training.threshold)?;
        let score_path = out.join(format!("{}.score.json", p.name));
        score.save_json(&score_path)?;
        save_onsets(
            &out.join(format!("{}.onsets.txt", p.name)),
            &score.render_onsets(&p.grid)?,
        )?;
        p.grid
            .save_text(&out.join(format!("{}.tatums.txt", p.name)))?;
        written.push(score_path);
    }
    Ok(written)
}

/// Compares estimates in `est_dir` with references in `gt_dir`. Tatums
/// come from `data.tatums` when set, otherwise from `gt_dir`. Writes
/// `reports/metrics.json` and `reports/metrics.txt`.
pub fn evaluate_command(
    cfg: &ExperimentConfig,
    run: &RunDir,
    est_dir: &Path,
    gt_dir: &Path,
) -> Result<MetricsReport> {
    require_path(est_dir, "estimate directory")?;
    let mut names = names_with_suffix(gt_dir, ".onsets.txt")?;
    names.extend(names_with_suffix(gt_dir, ".score.json")?);
    names.sort();
    names.dedup();
    if names.is_empty() {
        return Err(Error::validation(format!(
            "no references in {}",
            gt_dir.display()
        )));
    }
    let tatums = cfg.data.tatums.as_deref();
    let evals = names
        .iter()
        .map(|name| {
            let grid = load_grid(gt_dir, tatums, name)?;
            let (gt_score, gt_onsets) = load_annotation(gt_dir, name, &grid)?;
            let est_file = est_dir.join(format!("{name}.score.json"));
            let est_onsets_file = est_dir.join(format!("{name}.onsets.txt"));
            if !est_file.exists() && !est_onsets_file.exists() {
                require_path(&est_onsets_file, "estimate")?;
            }
            let (est_score, est_onsets) = load_annotation(est_dir, name, &grid)?;
            Ok(PieceEval {
                name: name.clone(),
                est_onsets,
                gt_onsets,
                est_score,
                gt_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = corpus_metrics(&evals, TOLERANCE)?;
    report.save_json(&run.reports().join("metrics.json"))?;
    let table = run.reports().join("metrics.txt");
    fs::write(&table, report.to_table("total")).map_err(|e| Error::io(&table, e))?;
    Ok(report)
}

/// Writes `attention/<name>.safetensors` (arrays `alpha_l<l>_h<h>`, each
/// `N x N`, plus the positional encoding `encoding`, `D_F x N`) and one
/// PNG heatmap per map into `attention/`.
pub fn export_attention_command(
    cfg: &ExperimentConfig,
    run: &RunDir,
    model_path: &Path,
    input: Option<&Path>,
    piece: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let model = load_model(model_path)?;
    let mcfg = *model.config();
    let dir = input.or(cfg.data.test.as_deref()).ok_or_else(|| {
        Error::validation("export-attention needs an input directory or data.test")
    })?;
    let mut inputs = load_inputs(dir, cfg.data.tatums.as_deref(), cfg.separated_drums)?;
    if let Some(name) = piece {
        inputs.retain(|p| p.name == name);
        if inputs.is_empty() {
            return Err(Error::validation(format!(
                "no piece named {name:?} in {}",
                dir.display()
            )));
        }
    }
    let out = run.subdir("attention")?;
    let mut written = Vec::new();
    for p in &inputs {
        let maps = model.attention_maps(&p.feature, &p.grid)?;
        let mut file = ArrayFile::default();
        file.metadata.insert("piece".into(), p.name.clone());
        for (l, layer) in maps.iter().enumerate() {
            for (h, alpha) in layer.iter().enumerate() {
                let values: Vec<f64> = alpha.data().iter().map(|v| *v as f64).collect();
                let (r, c) = (alpha.rows(), alpha.cols());
                crate::heatmap::save(
                    &values,
                    r,
                    c,
                    &out.join(format!("{}_l{l}_h{h}.png", p.name)),
                )?;
                file.insert(
                    format!("alpha_l{l}_h{h}"),
                    vec![r, c],
                    ArrayData::F32(alpha.data().to_vec()),
                );
            }
        }
        if let crate::transcriber::DecoderConfig::SelfAtt(sa) = mcfg.decoder {
            let pe = PositionalEncoding::new(sa.encoding, mcfg.encoder.d_f, p.grid.len())?;
            let values: Vec<f64> = (0..pe.dim())
                .flat_map(|d| (0..pe.len()).map(move |n| (d, n)))
                .map(|(d, n)| pe.get(d, n))
                .collect();
            crate::heatmap::save(
                &values,
                pe.dim(),
                pe.len(),
                &out.join(format!("{}_encoding.png", p.name)),
            )?;
            file.insert("encoding", vec![pe.dim(), pe.len()], ArrayData::F64(values));
        }
        let path = out.join(format!("{}.safetensors", p.name));
        file.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
