//! Dataset assembly and the training loop.

use crate::checkpoint::save_checkpoint;
use crate::data::{Batch, Example};
use crate::error::{ModelError, Result};
use crate::loss::{elbo_loss, LossBreakdown};
use crate::vae::{Forcing, VaVae};
use candle_core::backprop::GradStore;
use candle_core::{DType, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use emoacc_core::score::{parse_chord_annotations, parse_midi, segment, TrackSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub tf_ratio_pianotree: f64,
    pub tf_ratio_valence: f64,
    pub seed: u64,
    pub kl_weight: f64,
    /// Linear KL warm-up over the first 10% of steps.
    pub kl_warmup: bool,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 6,
            lr: 1e-3,
            lr_decay: 0.999,
            lr_floor: 1e-5,
            tf_ratio_pianotree: 0.6,
            tf_ratio_valence: 0.5,
            seed: 0,
            kl_weight: 1.0,
            kl_warmup: false,
            clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, r) in [("tf_ratio_pianotree", self.tf_ratio_pianotree), ("tf_ratio_valence", self.tf_ratio_valence)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if !(self.lr_floor <= self.lr) {
            return Err(format!("lr_floor {} exceeds lr {}", self.lr_floor, self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err("batch_size and epochs must be positive".into());
        }
        if !(self.clip_norm > 0.0) || !(self.kl_weight >= 0.0) {
            return Err("clip_norm must be positive and kl_weight nonnegative".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let c: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

/// `max(lr · decay^step, floor)`.
pub fn lr_schedule(step: usize, cfg: &TrainingConfig) -> f64 {
    (cfg.lr * cfg.lr_decay.powf(step as f64)).max(cfg.lr_floor)
}

/// True with probability `ratio`.
pub fn teacher_forcing_gate<R: Rng>(ratio: f64, rng: &mut R) -> bool {
    rng.random_bool(ratio.clamp(0.0, 1.0))
}

/// Song-level split into training and validation examples.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train_songs: Vec<String>,
    pub validation_songs: Vec<String>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

/// Shuffles with `seed` and keeps `max(1, ⌊0.8 n⌋)` items for training.
pub fn split_songs<T>(mut items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n_train = ((items.len() * 8) / 10).max(1).min(items.len());
    let validation = items.split_off(n_train);
    (items, validation)
}

/// Reads a MIDI file and, when present, the sibling `<stem>.chords.txt` annotation.
pub fn load_song(midi: &Path) -> Result<TrackSet> {
    let bytes = std::fs::read(midi).map_err(|e| ModelError::Data(format!("{}: {e}", midi.display())))?;
    let ts = parse_midi(&bytes).map_err(|e| ModelError::Data(format!("{}: {e}", midi.display())))?;
    let chords = midi.with_extension("chords.txt");
    if chords.exists() {
        let text = std::fs::read(&chords).map_err(|e| ModelError::Data(format!("{}: {e}", chords.display())))?;
        let c = parse_chord_annotations(&text, &ts.tempo, Some(ts.steps()))
            .map_err(|e| ModelError::Data(format!("{}: {e}", chords.display())))?;
        return Ok(ts.with_chords(c));
    }
    Ok(ts)
}

pub fn examples_from(ts: &TrackSet) -> Result<Vec<Example>> {
    segment(ts).iter().map(Example::from_segment).collect()
}

/// Song-level 8:2 split of named songs.
pub fn split_tracks(songs: Vec<(String, TrackSet)>, seed: u64) -> Result<DatasetSplit> {
    if songs.is_empty() {
        return Err(ModelError::Data("empty corpus".into()));
    }
    let (train, validation) = split_songs(songs, seed);
    let collect = |part: &[(String, TrackSet)]| -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for (_, ts) in part {
            out.extend(examples_from(ts)?);
        }
        Ok(out)
    };
    let split = DatasetSplit {
        train: collect(&train)?,
        validation: collect(&validation)?,
        train_songs: train.into_iter().map(|s| s.0).collect(),
        validation_songs: validation.into_iter().map(|s| s.0).collect(),
    };
    log::info!(
        "split: {} train songs ({} segments), {} validation songs ({} segments)",
        split.train_songs.len(),
        split.train.len(),
        split.validation_songs.len(),
        split.validation.len()
    );
    Ok(split)
}

/// Loads every `*.mid` in `dir` (sorted by name) and splits by song.
pub fn prepare_splits(dir: &Path, seed: u64) -> Result<DatasetSplit> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("mid")))
        .collect();
    paths.sort();
    let songs = paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            load_song(p).map(|ts| (name, ts))
        })
        .collect::<Result<Vec<_>>>()?;
    split_tracks(songs, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("step,epoch,lr,recon_valence,recon_arousal,kl_valence,kl_arousal,total\n");
    for r in rows {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.epoch, r.lr, l.recon_valence, l.recon_arousal, l.kl_valence, l.kl_arousal, l.total
        ));
    }
    s
}

/// Mean total loss per epoch, in epoch order.
pub fn epoch_means(rows: &[HistoryRow]) -> Vec<f64> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.loss.total).collect();
            xs.iter().sum::<f64>() / xs.len().max(1) as f64
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step} ({component}); last good checkpoint: {last_good:?}")]
    Diverged { step: usize, component: String, last_good: Option<PathBuf> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Returned by the observer after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub checkpoints: Vec<PathBuf>,
    pub stopped_early: bool,
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm.is_finite() && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Trains `model` in place. Writes `history.csv` and one checkpoint per epoch
/// (`epoch_<k>/`) under `out_dir` when given. The observer may stop training early.
pub fn train(
    model: &VaVae,
    examples: &[Example],
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
    mut observer: impl FnMut(&VaVae, &HistoryRow) -> Control,
) -> std::result::Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if examples.is_empty() {
        return Err(ModelError::Data("empty training split".into()).into());
    }
    let vars = model.params().vars();
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: 0.0,
        },
    )
    .map_err(ModelError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let planned = cfg.max_steps.map_or(per_epoch * cfg.epochs, |m| m.min(per_epoch * cfg.epochs));
    let warmup = ((planned as f64) * 0.1).ceil().max(1.0);
    let mut out = TrainOutcome { history: Vec::new(), checkpoints: Vec::new(), stopped_early: false };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(ModelError::from)?;
    }
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let lr = lr_schedule(step, cfg);
            opt.set_learning_rate(lr);
            let forcing = Forcing {
                valence: teacher_forcing_gate(cfg.tf_ratio_valence, &mut rng),
                pianotree: teacher_forcing_gate(cfg.tf_ratio_pianotree, &mut rng),
            };
            let batch_examples: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = Batch::new(&batch_examples, model.dtype())?;
            let fwd = model.forward(&batch, forcing, &mut rng)?;
            let kl_weight =
                if cfg.kl_warmup { cfg.kl_weight * ((step + 1) as f64 / warmup).min(1.0) } else { cfg.kl_weight };
            let loss = elbo_loss(&fwd, &batch, kl_weight)?;
            let diverged = |component: String, out: &TrainOutcome| TrainError::Diverged {
                step,
                component,
                last_good: out.checkpoints.last().cloned(),
            };
            let breakdown = match loss.breakdown() {
                Ok(b) => b,
                Err(ModelError::NonFinite { component }) => return Err(diverged(component.into(), &out)),
                Err(e) => return Err(e.into()),
            };
            let mut grads = loss.total.backward().map_err(ModelError::from)?;
            let norm = clip_grad_norm(&mut grads, &vars, cfg.clip_norm)?;
            if !norm.is_finite() {
                return Err(diverged("gradient".into(), &out));
            }
            opt.step(&grads).map_err(ModelError::from)?;
            let row = HistoryRow { step, epoch, lr, loss: breakdown };
            out.history.push(row);
            step += 1;
            if observer(model, &row) == Control::Stop {
                out.stopped_early = true;
                break 'epochs;
            }
        }
        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch_{}", epoch + 1));
            save_checkpoint(model, &path, cfg.seed, step as u64, epoch + 1)?;
            out.checkpoints.push(path);
            std::fs::write(dir.join("history.csv"), history_csv(&out.history)).map_err(ModelError::from)?;
        }
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("history.csv"), history_csv(&out.history)).map_err(ModelError::from)?;
        if out.stopped_early || cfg.max_steps.is_some_and(|m| step >= m) {
            let path = dir.join("final");
            save_checkpoint(model, &path, cfg.seed, step as u64, out.history.last().map_or(0, |r| r.epoch + 1))?;
            out.checkpoints.push(path);
        }
    }
    Ok(out)
}
