//! The CLI verbs as plain functions over parsed arguments.

use crate::api::{encode_midi, prepare, run, GenerationRequest, GenerationResult, MeasuredFlow};
use anyhow::{anyhow, bail, Context, Result};
use candle_core::DType;
use emoacc_core::emotion::{validate_curve, EmotionCurve};
use emoacc_core::evaluation::{aggregate_report, measure_flow, mute_scores, CorrelationReport, MuteScores, ReportInputs};
use emoacc_core::score::{merge_accompaniment, parse_midi, TrackSet};
use emoacc_core::synth::{synth_corpus, write_corpus};
use emoacc_model::trainer::{history_csv, load_song, split_songs, train, Control};
use emoacc_model::{generate, load_checkpoint, prepare_splits, save_checkpoint, GenerationOptions, ModelConfig, TrainingConfig, VaVae};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// `{"valence": Curve, "arousal": Curve}`, the file format of `--curves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub valence: EmotionCurve,
    pub arousal: EmotionCurve,
}

pub fn model_config(name: &str) -> Result<ModelConfig> {
    match name {
        "full" => Ok(ModelConfig::full()),
        "desk" => Ok(ModelConfig::desk()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("model config {path}"))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub train_songs: usize,
    pub validation_songs: usize,
    pub checkpoints: Vec<PathBuf>,
}

pub fn train_command(data: &Path, out: &Path, model: &ModelConfig, cfg: &TrainingConfig) -> Result<TrainSummary> {
    cfg.validate().map_err(|e| anyhow!(e))?;
    let split = prepare_splits(data, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("training_config.json"), cfg.to_json())?;
    std::fs::write(
        out.join("split.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "train": split.train_songs,
            "validation": split.validation_songs,
        }))?,
    )?;
    let vae = VaVae::new(model, cfg.seed, DType::F32)?;
    let outcome = train(&vae, &split.train, cfg, Some(out), |_, row| {
        if row.step % 50 == 0 {
            log::info!("step {} epoch {} loss {:.3}", row.step, row.epoch, row.loss.total);
        }
        Control::Continue
    })?;
    std::fs::write(out.join("history.csv"), history_csv(&outcome.history))?;
    Ok(TrainSummary {
        steps: outcome.history.len(),
        epochs: outcome.history.last().map_or(0, |r| r.epoch + 1),
        final_loss: outcome.history.last().map(|r| r.loss.total),
        train_songs: split.train_songs.len(),
        validation_songs: split.validation_songs.len(),
        checkpoints: outcome.checkpoints,
    })
}

/// The report written beside the generated MIDI.
#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub measured_flow: MeasuredFlow,
    pub correlation: Option<CorrelationReport>,
    pub transpositions: Vec<emoacc_core::rules::TranspositionDecision>,
    pub model_version: String,
}

pub struct GenerateArgs<'a> {
    pub checkpoint: &'a Path,
    pub melody: &'a Path,
    pub chords: Option<&'a Path>,
    pub curves: &'a Path,
    pub out: &'a Path,
    pub report: Option<&'a Path>,
    pub temperature: f64,
    pub seed: u64,
    pub apply_rules: bool,
    pub max_bars: usize,
}

/// Goes through the same validation as the service.
pub fn generate_command(a: &GenerateArgs<'_>) -> Result<GenerationResult> {
    let (model, manifest) = load_checkpoint(a.checkpoint)?;
    let curves: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.curves)?)
        .with_context(|| format!("curves {}", a.curves.display()))?;
    let req = GenerationRequest {
        melody: encode_midi(&std::fs::read(a.melody).with_context(|| format!("melody {}", a.melody.display()))?),
        chords: a.chords.map(std::fs::read_to_string).transpose()?,
        valence_curve: curves.get("valence").cloned().ok_or_else(|| anyhow!("curves: missing \"valence\""))?,
        arousal_curve: curves.get("arousal").cloned().ok_or_else(|| anyhow!("curves: missing \"arousal\""))?,
        temperature: a.temperature,
        seed: a.seed,
        apply_rules: a.apply_rules,
    };
    let prepared = prepare(&req, a.max_bars).map_err(|e| {
        let body = e.body();
        anyhow!("{}: {}", body.error, body.details.join("; "))
    })?;
    let result = run(&model, &manifest.model_version, &prepared)?;
    std::fs::write(a.out, crate::api::decode_midi(&result.accompaniment)?)?;
    let report = GenerateReport {
        measured_flow: result.measured_flow.clone(),
        correlation: result.correlation.clone(),
        transpositions: result.transpositions.clone(),
        model_version: result.model_version.clone(),
    };
    let report_path = a.report.map_or_else(|| a.out.with_extension("json"), Path::to_path_buf);
    std::fs::write(report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(result)
}

fn accompaniment_of(path: &Path) -> Result<emoacc_core::score::PianoRoll> {
    let ts = parse_midi(&std::fs::read(path).with_context(|| path.display().to_string())?)?;
    Ok(merge_accompaniment(&ts)?)
}

/// MUTE scores of two files' accompaniment tracks.
pub fn compare_command(pred: &Path, reference: &Path) -> Result<MuteScores> {
    let (p, r) = (accompaniment_of(pred)?, accompaniment_of(reference)?);
    let steps = p.steps().max(r.steps());
    Ok(mute_scores(&p.resized(steps)?, &r.resized(steps)?)?)
}

/// Measured flow of the accompaniment of a song.
pub fn song_flow(ts: &TrackSet) -> Result<CurvePair> {
    if !ts.has_chords() {
        bail!("{}", crate::api::REASON_CHORDS_REQUIRED);
    }
    let acc = merge_accompaniment(ts)?;
    let (valence, arousal) = measure_flow(&acc, &ts.chords)?;
    Ok(CurvePair { valence, arousal })
}

pub fn convert_command(input: &Path, chords: Option<&Path>) -> Result<CurvePair> {
    let mut ts = load_song(input)?;
    if let Some(c) = chords {
        let text = std::fs::read(c)?;
        let seq = emoacc_core::score::parse_chord_annotations(&text, &ts.tempo, Some(ts.steps()))?;
        ts = ts.with_chords(seq);
    }
    song_flow(&ts)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub evaluated: Vec<String>,
    pub skipped: Vec<(String, String)>,
    pub table: Vec<emoacc_core::evaluation::TableRow>,
    pub files: Vec<PathBuf>,
}

/// Flow-correlation study on the validation songs of `data`: each song's own
/// measured flow is the guiding curve pair; songs whose curves fail the gate are skipped.
pub fn evaluate_command(checkpoint: &Path, data: &Path, out: &Path, opts: &GenerationOptions, split_seed: u64) -> Result<EvaluationSummary> {
    let (model, manifest) = load_checkpoint(checkpoint)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("mid")))
        .collect();
    paths.sort();
    let (_, validation) = split_songs(paths, split_seed);
    let (mut rows, mut evaluated, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    let mut attention = None;
    let mut transposition = None;
    for path in &validation {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ts = load_song(path)?;
        let curves = match song_flow(&ts) {
            Ok(c) => c,
            Err(e) => {
                skipped.push((name, e.to_string()));
                continue;
            }
        };
        let gate: Vec<String> =
            [&curves.valence, &curves.arousal].iter().flat_map(|c| validate_curve(c).reasons).collect();
        if !gate.is_empty() {
            skipped.push((name, gate.join(", ")));
            continue;
        }
        let g = generate(&model, &ts, &curves.valence, &curves.arousal, opts)?;
        if attention.is_none() {
            attention = g.attention.first().cloned();
        }
        if transposition.is_none() && g.transpositions.iter().any(|d| d.selected) {
            let raw = generate(&model, &ts, &curves.valence, &curves.arousal, &GenerationOptions { apply_rules: false, ..opts.clone() })?;
            transposition = Some((raw.accompaniment, g.accompaniment.clone()));
        }
        match g.correlation {
            Some(mut r) => {
                r.song = name.clone();
                rows.push(r);
                evaluated.push(name);
            }
            None => skipped.push((name, "generated accompaniment is empty".into())),
        }
    }
    let summary = aggregate_report(
        &ReportInputs {
            model: &manifest.model_version,
            rows: &rows,
            attention: attention.as_deref(),
            transposition: transposition.as_ref().map(|(a, b)| (a, b)),
        },
        out,
    )?;
    Ok(EvaluationSummary { evaluated, skipped, table: summary.table, files: summary.files })
}

pub fn synth_command(out: &Path, count: usize, seed: u64, min_bars: usize, max_bars: usize) -> Result<Vec<PathBuf>> {
    Ok(write_corpus(&synth_corpus(seed, count, min_bars, max_bars), out)?)
}

/// Writes a freshly initialised checkpoint (useful as a stub for the service).
pub fn init_command(out: &Path, model: &ModelConfig, seed: u64) -> Result<()> {
    save_checkpoint(&VaVae::new(model, seed, DType::F32)?, out, seed, 0, 0)?;
    Ok(())
}
