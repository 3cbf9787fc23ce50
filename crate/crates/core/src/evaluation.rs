//! Flow correlation, MUTE note metrics and report emitters.
//!
//! Report files written by [`aggregate_report`]:
//!
//! * `correlations.csv`: `song,kind,basis,r,error`, one row per song and kind;
//!   `r` is empty when the correlation is undefined.
//! * `table.csv`: `Emotion Type,Model,HIB,LIB,Mean`, mean `r` per stratum;
//!   `Mean` is over all songs.
//! * `flows.png`: heat map of input and measured flows (one row pair per song
//!   and kind, input above output) next to box plots of `r` per kind.
//! * `attention.png`: attention matrix heat map, when one is supplied.
//! * `transposition.png`: piano rolls before and after the rule constraint,
//!   when supplied.

use crate::emotion::{
    arousal_map, quantize_arousal, quantize_valence, valence_map, EmotionCurve, EmotionKind,
};
use crate::score::{normalize_root, ChromaSequence, PianoRoll, PITCHES, STEPS_PER_BEAT};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("roll lengths differ ({0} vs {1})")]
    StepMismatch(usize, usize),
    #[error("generated music is empty")]
    EmptyMusic,
    #[error("chord sequence has {chords} columns for a roll of {steps} steps")]
    ChordLength { chords: usize, steps: usize },
    #[error("no songs to report")]
    NoSongs,
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuteScores {
    pub fs: f64,
    pub fs_precision: f64,
    pub fs_recall: f64,
    pub fspc: f64,
    pub fspc_precision: f64,
    pub fspc_recall: f64,
    /// Set when a grid pair was empty on both sides and its F1 was taken as 1.
    pub vacuous: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    /// (precision, recall, f1, vacuous)
    fn f1(self) -> (f64, f64, f64, bool) {
        if self.tp + self.fp + self.fn_ == 0 {
            return (1.0, 1.0, 1.0, true);
        }
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f, false)
    }

    fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            _ => {}
        }
    }
}

/// Cell-wise F1 on the binarized 128×T grids and on their 12×T pitch-class folds.
pub fn mute_scores(pred: &PianoRoll, reference: &PianoRoll) -> Result<MuteScores, EvalError> {
    if pred.steps() != reference.steps() {
        return Err(EvalError::StepMismatch(pred.steps(), reference.steps()));
    }
    let steps = pred.steps();
    let mut full = Counts::default();
    let mut pc = Counts::default();
    for t in 0..steps {
        let mut fold_p = [false; 12];
        let mut fold_r = [false; 12];
        for p in 0..PITCHES {
            let a = pred.is_active(p, t);
            let b = reference.is_active(p, t);
            full.add(a, b);
            fold_p[p % 12] |= a;
            fold_r[p % 12] |= b;
        }
        for k in 0..12 {
            pc.add(fold_p[k], fold_r[k]);
        }
    }
    let (fs_precision, fs_recall, fs, v1) = full.f1();
    let (fspc_precision, fspc_recall, fspc, v2) = pc.f1();
    Ok(MuteScores { fs, fs_precision, fs_recall, fspc, fspc_precision, fspc_recall, vacuous: v1 || v2 })
}

pub fn mute_fs(pred: &PianoRoll, reference: &PianoRoll) -> Result<f64, EvalError> {
    mute_scores(pred, reference).map(|s| s.fs)
}

pub fn mute_fspc(pred: &PianoRoll, reference: &PianoRoll) -> Result<f64, EvalError> {
    mute_scores(pred, reference).map(|s| s.fspc)
}

/// High or low input basis: whether the guiding curve's mean exceeds 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "HIB")]
    Hib,
    #[serde(rename = "LIB")]
    Lib,
}

impl Basis {
    pub fn of(curve: &EmotionCurve) -> Self {
        if curve.mean() > 0.5 {
            Basis::Hib
        } else {
            Basis::Lib
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Hib => "HIB",
            Basis::Lib => "LIB",
        }
    }
}

/// Input vs. measured flow of one kind, sampled on a common beat grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowScore {
    pub kind: EmotionKind,
    pub basis: Basis,
    pub r: Option<f64>,
    pub error: Option<String>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub song: String,
    pub valence: FlowScore,
    pub arousal: FlowScore,
}

impl CorrelationReport {
    pub fn valence_r(&self) -> Option<f64> {
        self.valence.r
    }

    pub fn arousal_r(&self) -> Option<f64> {
        self.arousal.r
    }
}

/// Measured valence and arousal of generated music.
///
/// `chords` may be given per step (same length as the roll) or per beat; it is
/// root-normalized before mapping.
pub fn measure_flow(roll: &PianoRoll, chords: &ChromaSequence) -> Result<(EmotionCurve, EmotionCurve), EvalError> {
    let beats = roll.steps() / STEPS_PER_BEAT;
    let per_beat = if chords.len() == roll.steps() {
        chords.downsample(STEPS_PER_BEAT)
    } else if chords.len() == beats {
        chords.clone()
    } else {
        return Err(EvalError::ChordLength { chords: chords.len(), steps: roll.steps() });
    };
    let v = valence_map(&normalize_root(&per_beat)).expect("normalized input");
    Ok((quantize_valence(&v), quantize_arousal(&arousal_map(roll))))
}

/// Beat-start grid `0, 4, 8, ...` below `steps`.
pub fn flow_grid(steps: usize) -> Vec<usize> {
    (0..steps).step_by(STEPS_PER_BEAT).collect()
}

/// Samples `curve` at grid `steps` of a piece `total` steps long, stretching
/// the curve's horizon onto the piece.
pub fn sample_on_grid(curve: &EmotionCurve, grid: &[usize], total: usize) -> Vec<f64> {
    let scale = curve.horizon() as f64 / total.max(1) as f64;
    grid.iter().map(|&s| curve.value_at(s as f64 * scale)).collect()
}

fn score(kind: EmotionKind, input: &EmotionCurve, measured: &EmotionCurve, steps: usize) -> FlowScore {
    let grid = flow_grid(steps);
    let a = sample_on_grid(input, &grid, steps);
    let b = sample_on_grid(measured, &grid, steps);
    let (r, error) = match pearson(&a, &b) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FlowScore { kind, basis: Basis::of(input), r, error, input: a, output: b }
}

/// Correlation of the guiding curves with the flow measured back from the
/// generated accompaniment. Curve validity is the caller's responsibility.
pub fn flow_correlation(
    song: &str,
    valence_in: &EmotionCurve,
    arousal_in: &EmotionCurve,
    roll: &PianoRoll,
    chords: &ChromaSequence,
) -> Result<CorrelationReport, EvalError> {
    if roll.is_silent() && !chords.has_chords() {
        return Err(EvalError::EmptyMusic);
    }
    let (v, a) = measure_flow(roll, chords)?;
    Ok(CorrelationReport {
        song: song.to_string(),
        valence: score(EmotionKind::Valence, valence_in, &v, roll.steps()),
        arousal: score(EmotionKind::Arousal, arousal_in, &a, roll.steps()),
    })
}

/// Linear-interpolation quantile (Hyndman–Fan type 7). Reorders `xs`.
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of an empty sample");
    let h = (xs.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let n = xs.len();
    let (_, &mut a, rest) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    if lo + 1 >= n || h == lo as f64 {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + (h - lo as f64) * (b - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_stats(xs: &[f64]) -> Option<BoxStats> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    Some(BoxStats {
        min: quantile(&mut v, 0.0),
        q1: quantile(&mut v, 0.25),
        median: quantile(&mut v, 0.5),
        q3: quantile(&mut v, 0.75),
        max: quantile(&mut v, 1.0),
    })
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub kind: EmotionKind,
    pub model: String,
    pub hib: Option<f64>,
    pub lib: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs<'a> {
    pub model: &'a str,
    pub rows: &'a [CorrelationReport],
    /// Square attention matrix, row = query.
    pub attention: Option<&'a [Vec<f64>]>,
    pub transposition: Option<(&'a PianoRoll, &'a PianoRoll)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub table: Vec<TableRow>,
    pub boxes: Vec<(EmotionKind, Option<BoxStats>)>,
    pub files: Vec<PathBuf>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn flow(r: &CorrelationReport, kind: EmotionKind) -> &FlowScore {
    match kind {
        EmotionKind::Valence => &r.valence,
        EmotionKind::Arousal => &r.arousal,
    }
}

const KINDS: [EmotionKind; 2] = [EmotionKind::Valence, EmotionKind::Arousal];

fn kind_label(k: EmotionKind) -> &'static str {
    match k {
        EmotionKind::Valence => "Valence",
        EmotionKind::Arousal => "Arousal",
    }
}

pub fn summary_table(model: &str, rows: &[CorrelationReport]) -> Vec<TableRow> {
    KINDS
        .iter()
        .map(|&kind| {
            let scores = || rows.iter().map(move |r| flow(r, kind));
            let by = |b: Basis| mean(scores().filter(|f| f.basis == b).filter_map(|f| f.r));
            TableRow {
                kind,
                model: model.to_string(),
                hib: by(Basis::Hib),
                lib: by(Basis::Lib),
                mean: mean(scores().filter_map(|f| f.r)),
            }
        })
        .collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

pub fn table_csv(table: &[TableRow]) -> String {
    let mut s = String::from("Emotion Type,Model,HIB,LIB,Mean\n");
    for r in table {
        let _ = writeln!(s, "{},{},{},{},{}", kind_label(r.kind), r.model, cell(r.hib), cell(r.lib), cell(r.mean));
    }
    s
}

pub fn correlations_csv(rows: &[CorrelationReport]) -> String {
    let mut s = String::from("song,kind,basis,r,error\n");
    for r in rows {
        for kind in KINDS {
            let f = flow(r, kind);
            let err = f.error.as_deref().unwrap_or("").replace(',', ";");
            let _ = writeln!(s, "{},{},{},{},{}", r.song, kind_label(kind).to_lowercase(), f.basis.label(), cell(f.r), err);
        }
    }
    s
}

/// Writes the tables and figures into `out_dir`.
pub fn aggregate_report(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<ReportSummary, EvalError> {
    if inputs.rows.is_empty() {
        return Err(EvalError::NoSongs);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| EvalError::Io { path: out_dir.into(), source })?;
    let write = |name: &str, body: &str| -> Result<PathBuf, EvalError> {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|source| EvalError::Io { path: p.clone(), source })?;
        Ok(p)
    };
    let table = summary_table(inputs.model, inputs.rows);
    let mut files = vec![write("table.csv", &table_csv(&table))?, write("correlations.csv", &correlations_csv(inputs.rows))?];

    let boxes: Vec<(EmotionKind, Option<BoxStats>)> = KINDS
        .iter()
        .map(|&k| (k, box_stats(&inputs.rows.iter().filter_map(|r| flow(r, k).r).collect::<Vec<_>>())))
        .collect();
    let p = out_dir.join("flows.png");
    flow_figure(inputs.rows, &boxes).save(&p)?;
    files.push(p);
    if let Some(att) = inputs.attention {
        let p = out_dir.join("attention.png");
        heat_map(att, 8).save(&p)?;
        files.push(p);
    }
    if let Some((before, after)) = inputs.transposition {
        let p = out_dir.join("transposition.png");
        roll_comparison(before, after).save(&p)?;
        files.push(p);
    }
    Ok(ReportSummary { table, boxes, files })
}

/// Dark blue → teal → yellow ramp for `v` in `[0, 1]`.
fn ramp(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 } * 2.0;
    let i = (v.floor() as usize).min(1);
    let w = v - i as f64;
    let c = |j: usize| (STOPS[i][j] + w * (STOPS[i + 1][j] - STOPS[i][j])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn fill(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, c: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, c);
        }
    }
}

/// Row-normalized heat map, `px` pixels per cell.
pub fn heat_map(m: &[Vec<f64>], px: u32) -> RgbImage {
    let rows = m.len().max(1) as u32;
    let cols = m.iter().map(Vec::len).max().unwrap_or(1).max(1) as u32;
    let mut img = RgbImage::new(cols * px, rows * px);
    for (i, row) in m.iter().enumerate() {
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (j, v) in row.iter().enumerate() {
            let n = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            fill(&mut img, j as u32 * px, i as u32 * px, px, px, ramp(n));
        }
    }
    img
}

fn flow_figure(rows: &[CorrelationReport], boxes: &[(EmotionKind, Option<BoxStats>)]) -> RgbImage {
    const CELL: u32 = 6;
    const GAP: u32 = 4;
    const BOX_W: u32 = 40;
    const PLOT_H: u32 = 200;
    let cols = rows.iter().map(|r| r.valence.input.len().max(r.arousal.input.len())).max().unwrap_or(1) as u32;
    let heat_rows = rows.len() as u32 * 4;
    let heat_w = cols * CELL;
    let height = (heat_rows * CELL + GAP * rows.len() as u32).max(PLOT_H + 2 * GAP);
    let width = heat_w + 3 * GAP + 2 * (BOX_W + GAP);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut y = 0;
    for r in rows {
        for f in [&r.valence, &r.arousal] {
            for series in [&f.input, &f.output] {
                for (j, v) in series.iter().enumerate() {
                    fill(&mut img, j as u32 * CELL, y, CELL, CELL, ramp(*v));
                }
                y += CELL;
            }
        }
        y += GAP;
    }
    // Box plots of r in [-1, 1], one per kind.
    let to_y = |r: f64| GAP + ((1.0 - r.clamp(-1.0, 1.0)) / 2.0 * PLOT_H as f64) as u32;
    let grey = Rgb([160, 160, 160]);
    let x0 = heat_w + 2 * GAP;
    fill(&mut img, x0, to_y(0.0), 2 * (BOX_W + GAP), 1, grey);
    for (i, (_, b)) in boxes.iter().enumerate() {
        let Some(b) = b else { continue };
        let x = x0 + i as u32 * (BOX_W + GAP);
        let colour = if i == 0 { Rgb([200, 80, 60]) } else { Rgb([60, 100, 200]) };
        fill(&mut img, x + BOX_W / 2, to_y(b.max), 1, to_y(b.min) - to_y(b.max) + 1, Rgb([0, 0, 0]));
        fill(&mut img, x, to_y(b.q3), BOX_W, to_y(b.q1) - to_y(b.q3) + 1, colour);
        fill(&mut img, x, to_y(b.median), BOX_W, 2, Rgb([0, 0, 0]));
    }
    img
}

fn roll_comparison(before: &PianoRoll, after: &PianoRoll) -> RgbImage {
    const PX: u32 = 3;
    let steps = before.steps().max(after.steps()) as u32;
    let gap = 4;
    let mut img = RgbImage::from_pixel(steps * PX * 2 + gap, PITCHES as u32 * PX, Rgb([255, 255, 255]));
    for (k, roll) in [before, after].into_iter().enumerate() {
        let x0 = k as u32 * (steps * PX + gap);
        let h = img.height();
        for bar in (0..roll.steps()).step_by(16) {
            fill(&mut img, x0 + bar as u32 * PX, 0, 1, h, Rgb([220, 220, 220]));
        }
        for p in 0..PITCHES {
            for t in 0..roll.steps() {
                if roll.is_active(p, t) {
                    let c = if roll.is_onset(p, t) { Rgb([180, 30, 30]) } else { Rgb([30, 30, 30]) };
                    fill(&mut img, x0 + t as u32 * PX, (PITCHES - 1 - p) as u32 * PX, PX, PX, c);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{NoteEvent, Role};

    fn roll(cells: &[(u8, u32)]) -> PianoRoll {
        let notes: Vec<NoteEvent> = cells.iter().map(|&(p, t)| NoteEvent::new(p, t, 1, 80).unwrap()).collect();
        PianoRoll::from_notes(Role::Accompaniment, 32, &notes).unwrap()
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::ZeroVariance)));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(EvalError::TooShort(1))));
    }

    #[test]
    fn mute_examples() {
        let a = roll(&[(60, 0), (62, 0), (64, 0)]);
        let b = roll(&[(60, 0), (62, 0), (65, 0)]);
        assert!((mute_fs(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(mute_fs(&a, &a).unwrap(), 1.0);
        assert_eq!(mute_fs(&a, &roll(&[(30, 5)])).unwrap(), 0.0);
        let up = roll(&[(72, 0), (74, 0), (76, 0)]);
        assert_eq!(mute_fs(&a, &up).unwrap(), 0.0);
        assert_eq!(mute_fspc(&a, &up).unwrap(), 1.0);
        let empty = roll(&[]);
        let s = mute_scores(&empty, &empty).unwrap();
        assert!(s.vacuous && s.fs == 1.0);
    }

    #[test]
    fn quantile_type7() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&mut v, 0.0), 1.0);
        assert_eq!(quantile(&mut v, 1.0), 4.0);
        assert!((quantile(&mut v, 0.25) - 1.75).abs() < 1e-15);
        assert!((quantile(&mut v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn ramp_ends() {
        assert_eq!(ramp(0.0), Rgb([68, 1, 84]));
        assert_eq!(ramp(1.0), Rgb([253, 231, 37]));
    }
}
