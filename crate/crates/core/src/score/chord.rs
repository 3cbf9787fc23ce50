//! Chord labels, chroma sequences and the POP909 chord annotation format.
//!
//! | label  | quality              | intervals      |
//! |--------|----------------------|----------------|
//! | `maj`  | major triad          | 0 4 7          |
//! | `min`  | minor triad          | 0 3 7          |
//! | `dim`  | diminished triad     | 0 3 6          |
//! | `aug`  | augmented triad      | 0 4 8          |
//! | `maj7` | major seventh        | 0 4 7 11       |
//! | `min7` | minor seventh        | 0 3 7 10       |
//! | `7`    | dominant seventh     | 0 4 7 10       |
//! | `sus2` | suspended second     | 0 2 7          |
//! | `sus4` | suspended fourth     | 0 5 7          |
//!
//! Labels are written `Root:quality` (`C:maj`, `F#:min7`, `Bb:7`); a bare root
//! means major, a trailing `/bass` inversion is accepted and ignored, and `N`
//! marks a span without a chord.

use super::TempoMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PITCH_CLASS_NAMES: [&str; 12] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChordError {
    #[error("line {line}: unknown chord label {label:?}")]
    UnknownLabel { label: String, line: usize },
    #[error("line {line}: malformed annotation {text:?}")]
    Malformed { text: String, line: usize },
    #[error("line {line}: interval overlaps the previous one")]
    Overlap { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChordQuality {
    Maj,
    Min,
    Dim,
    Aug,
    Maj7,
    Min7,
    Dom7,
    Sus2,
    Sus4,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 9] = [
        ChordQuality::Maj,
        ChordQuality::Min,
        ChordQuality::Dim,
        ChordQuality::Aug,
        ChordQuality::Maj7,
        ChordQuality::Min7,
        ChordQuality::Dom7,
        ChordQuality::Sus2,
        ChordQuality::Sus4,
    ];

    pub fn intervals(self) -> &'static [usize] {
        match self {
            ChordQuality::Maj => &[0, 4, 7],
            ChordQuality::Min => &[0, 3, 7],
            ChordQuality::Dim => &[0, 3, 6],
            ChordQuality::Aug => &[0, 4, 8],
            ChordQuality::Maj7 => &[0, 4, 7, 11],
            ChordQuality::Min7 => &[0, 3, 7, 10],
            ChordQuality::Dom7 => &[0, 4, 7, 10],
            ChordQuality::Sus2 => &[0, 2, 7],
            ChordQuality::Sus4 => &[0, 5, 7],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChordQuality::Maj => "maj",
            ChordQuality::Min => "min",
            ChordQuality::Dim => "dim",
            ChordQuality::Aug => "aug",
            ChordQuality::Maj7 => "maj7",
            ChordQuality::Min7 => "min7",
            ChordQuality::Dom7 => "7",
            ChordQuality::Sus2 => "sus2",
            ChordQuality::Sus4 => "sus4",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.label() == s)
    }

    /// Binary chroma template with the root on `root`.
    pub fn template(self, root: u8) -> [f64; 12] {
        let mut col = [0.0; 12];
        for &i in self.intervals() {
            col[(root as usize + i) % 12] = 1.0;
        }
        col
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chord {
    pub root: u8,
    pub quality: ChordQuality,
}

impl Chord {
    pub fn new(root: u8, quality: ChordQuality) -> Self {
        Self { root: root % 12, quality }
    }

    pub fn chroma(&self) -> [f64; 12] {
        self.quality.template(self.root)
    }

    pub fn label(&self) -> String {
        format!("{}:{}", PITCH_CLASS_NAMES[self.root as usize], self.quality.label())
    }
}

fn parse_root(s: &str) -> Option<u8> {
    let mut chars = s.chars();
    let base = match chars.next()? {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut pc: i32 = base;
    for c in chars {
        match c {
            '#' => pc += 1,
            'b' => pc -= 1,
            _ => return None,
        }
    }
    Some(pc.rem_euclid(12) as u8)
}

/// Parses `Root:quality`; `Ok(None)` for the no-chord label `N`.
pub fn parse_chord_label(label: &str) -> Result<Option<Chord>, String> {
    let label = label.trim();
    if label == "N" {
        return Ok(None);
    }
    let without_bass = label.split('/').next().unwrap_or(label);
    let (root, quality) = match without_bass.split_once(':') {
        Some((r, q)) => (r, q),
        None => (without_bass, "maj"),
    };
    let root = parse_root(root).ok_or_else(|| label.to_string())?;
    let quality = ChordQuality::from_label(quality).ok_or_else(|| label.to_string())?;
    Ok(Some(Chord::new(root, quality)))
}

/// Rotates a chroma vector up by `k` semitones: class `j` moves to `j + k`.
pub fn rotate_chroma(col: &[f64; 12], k: i32) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (j, v) in col.iter().enumerate() {
        out[(j as i32 + k).rem_euclid(12) as usize] = *v;
    }
    out
}

/// A 12×T chroma sequence with the annotated root of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromaSequence {
    chroma: Vec<[f64; 12]>,
    root: Vec<Option<u8>>,
}

impl ChromaSequence {
    /// All columns without a chord.
    pub fn silent(steps: usize) -> Self {
        Self { chroma: vec![[0.0; 12]; steps], root: vec![None; steps] }
    }

    pub fn from_chords(chords: &[Option<Chord>]) -> Self {
        Self {
            chroma: chords.iter().map(|c| c.map(|c| c.chroma()).unwrap_or([0.0; 12])).collect(),
            root: chords.iter().map(|c| c.map(|c| c.root)).collect(),
        }
    }

    /// Builds a sequence from raw columns. A column with any nonzero entry
    /// must carry a root; an all-zero column must not.
    pub fn from_columns(chroma: Vec<[f64; 12]>, root: Vec<Option<u8>>) -> Result<Self, String> {
        if chroma.len() != root.len() {
            return Err(format!("{} columns but {} roots", chroma.len(), root.len()));
        }
        for (t, (c, r)) in chroma.iter().zip(&root).enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("column {t}: entries must lie in [0, 1]"));
            }
            let active = c.iter().any(|&v| v > 0.0);
            if active != r.is_some() {
                return Err(format!("column {t}: root must be set exactly when a chord is present"));
            }
            if matches!(r, Some(r) if *r > 11) {
                return Err(format!("column {t}: root must be a pitch class"));
            }
        }
        Ok(Self { chroma, root })
    }

    pub fn len(&self) -> usize {
        self.chroma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chroma.is_empty()
    }

    pub fn column(&self, t: usize) -> &[f64; 12] {
        &self.chroma[t]
    }

    pub fn columns(&self) -> &[[f64; 12]] {
        &self.chroma
    }

    pub fn root(&self, t: usize) -> Option<u8> {
        self.root[t]
    }

    /// The dictionary chord matching column `t` exactly, if any.
    pub fn chord_at(&self, t: usize) -> Option<Chord> {
        let root = self.root[t]?;
        ChordQuality::ALL
            .into_iter()
            .find(|q| q.template(root) == self.chroma[t])
            .map(|q| Chord::new(root, q))
    }

    pub fn roots(&self) -> &[Option<u8>] {
        &self.root
    }

    pub fn has_chords(&self) -> bool {
        self.root.iter().any(Option::is_some)
    }

    /// True when every annotated column has its root on C.
    pub fn is_root_normalized(&self) -> bool {
        self.root.iter().all(|r| matches!(r, None | Some(0)))
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        let mut out = Self::silent(len);
        for t in 0..len {
            if let Some(c) = self.chroma.get(start + t) {
                out.chroma[t] = *c;
                out.root[t] = self.root[start + t];
            }
        }
        out
    }

    pub fn resized(&self, steps: usize) -> Self {
        self.slice(0, steps)
    }

    pub fn concat(parts: &[ChromaSequence]) -> Self {
        Self {
            chroma: parts.iter().flat_map(|p| p.chroma.iter().copied()).collect(),
            root: parts.iter().flat_map(|p| p.root.iter().copied()).collect(),
        }
    }

    /// Keeps the first column of every group of `factor` columns.
    pub fn downsample(&self, factor: usize) -> Self {
        let idx = (0..self.len()).step_by(factor.max(1));
        Self {
            chroma: idx.clone().map(|t| self.chroma[t]).collect(),
            root: idx.map(|t| self.root[t]).collect(),
        }
    }

    /// Repeats every column `factor` times.
    pub fn upsample(&self, factor: usize) -> Self {
        Self {
            chroma: self.chroma.iter().flat_map(|c| std::iter::repeat_n(*c, factor)).collect(),
            root: self.root.iter().flat_map(|r| std::iter::repeat_n(*r, factor)).collect(),
        }
    }

    /// Transposes every annotated column up by `k` semitones.
    pub fn transposed(&self, k: i32) -> Self {
        Self {
            chroma: self.chroma.iter().map(|c| rotate_chroma(c, k)).collect(),
            root: self.root.iter().map(|r| r.map(|r| (r as i32 + k).rem_euclid(12) as u8)).collect(),
        }
    }
}

/// Nearest dictionary chord of a raw chroma column by cosine similarity over all
/// 12 roots and 9 qualities. Ties keep the lowest root, then the quality order.
/// `None` for an all-zero column.
pub fn best_chord(col: &[f64; 12]) -> Option<Chord> {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for root in 0..12u8 {
        for q in ChordQuality::ALL {
            let t = q.template(root);
            let tn = (q.intervals().len() as f64).sqrt();
            let score = col.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (norm * tn);
            if score > best_score + 1e-12 {
                best_score = score;
                best = Some(Chord::new(root, q));
            }
        }
    }
    best
}

impl ChromaSequence {
    /// Snaps every column to its [`best_chord`].
    pub fn estimated(columns: &[[f64; 12]]) -> Self {
        Self::from_chords(&columns.iter().map(best_chord).collect::<Vec<_>>())
    }
}

/// Rotates each annotated column so its root lands on C. No-chord columns pass through.
pub fn normalize_root(c: &ChromaSequence) -> ChromaSequence {
    ChromaSequence {
        chroma: c
            .chroma
            .iter()
            .zip(&c.root)
            .map(|(col, r)| match r {
                Some(r) => rotate_chroma(col, -(*r as i32)),
                None => *col,
            })
            .collect(),
        root: c.root.iter().map(|r| r.map(|_| 0)).collect(),
    }
}

/// Parses whitespace-separated `start_seconds end_seconds label` lines into a
/// step-indexed chroma sequence. Seconds are converted with `tempo`. The
/// output covers `steps` columns when given, otherwise up to the last interval.
pub fn parse_chord_annotations(
    text: &[u8],
    tempo: &TempoMap,
    steps: Option<usize>,
) -> Result<ChromaSequence, ChordError> {
    let text = String::from_utf8_lossy(text);
    let mut spans: Vec<(usize, usize, Option<Chord>)> = Vec::new();
    let mut prev_end = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let malformed = || ChordError::Malformed { text: line.to_string(), line: line_no };
        if fields.len() != 3 {
            return Err(malformed());
        }
        let start: f64 = fields[0].parse().map_err(|_| malformed())?;
        let end: f64 = fields[1].parse().map_err(|_| malformed())?;
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < start {
            return Err(malformed());
        }
        if start < prev_end - 1e-9 {
            return Err(ChordError::Overlap { line: line_no });
        }
        prev_end = end;
        let chord = parse_chord_label(fields[2])
            .map_err(|label| ChordError::UnknownLabel { label, line: line_no })?;
        let s = tempo.seconds_to_steps(start).round() as usize;
        let e = tempo.seconds_to_steps(end).round() as usize;
        spans.push((s, e, chord));
    }
    let total = steps.unwrap_or_else(|| spans.iter().map(|s| s.1).max().unwrap_or(0));
    let mut chords = vec![None; total];
    for (s, e, chord) in spans {
        for slot in chords.iter_mut().take(e.min(total)).skip(s) {
            *slot = chord;
        }
    }
    Ok(ChromaSequence::from_chords(&chords))
}

/// Formats a step-indexed sequence as `start end label` lines, merging runs
/// of equal chords. Columns outside the dictionary are written as `N`.
pub fn format_chord_annotations(c: &ChromaSequence, tempo: &TempoMap) -> String {
    let mut out = String::new();
    let mut t = 0;
    while t < c.len() {
        let chord = c.chord_at(t);
        let start = t;
        while t < c.len() && c.chord_at(t) == chord {
            t += 1;
        }
        let label = chord.map_or_else(|| "N".to_string(), |c| c.label());
        out.push_str(&format!(
            "{:.6} {:.6} {}\n",
            tempo.steps_to_seconds(start as f64),
            tempo.steps_to_seconds(t as f64),
            label
        ));
    }
    out
}
