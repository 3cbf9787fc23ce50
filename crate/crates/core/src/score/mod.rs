//! Symbolic score representation: notes, piano rolls, bar structure and track sets.
//!
//! All time values are counted in 16th-note steps. A bar of 4/4 spans
//! [`STEPS_PER_BAR`] steps and a training segment spans two bars.

mod chord;
mod midi;

pub use chord::{
    best_chord, format_chord_annotations, normalize_root, parse_chord_annotations, parse_chord_label,
    rotate_chroma, Chord,
    ChordError, ChordQuality, ChromaSequence, PITCH_CLASS_NAMES,
};
pub use midi::{parse_midi, write_midi, write_tracks, MidiError, TempoMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PITCHES: usize = 128;
pub const STEPS_PER_BEAT: usize = 4;
pub const STEPS_PER_BAR: usize = 16;
pub const BARS_PER_SEGMENT: usize = 2;
/// Length of an arousal window (one two-bar segment).
pub const SEGMENT_STEPS: usize = STEPS_PER_BAR * BARS_PER_SEGMENT;
/// Length of a valence window: one column per beat of a segment.
pub const VALENCE_STEPS: usize = SEGMENT_STEPS / STEPS_PER_BEAT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("note out of range: {0}")]
    InvalidNote(String),
    #[error("piano roll must have T > 0 steps")]
    EmptyRoll,
    #[error("piano roll length {steps} is not a multiple of the bar length {bar}")]
    RaggedRoll { steps: usize, bar: usize },
    #[error("dimension mismatch: {left} vs {right} steps")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid bar structure: {0}")]
    InvalidBars(String),
    #[error("bar index {index} out of range ({count} bars)")]
    BarOutOfRange { index: usize, count: usize },
}

/// A single note on the 16th-note grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: u32,
    pub pitch: u8,
    pub duration: u32,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: u32, duration: u32, velocity: u8) -> Result<Self, ScoreError> {
        if pitch > 127 {
            return Err(ScoreError::InvalidNote(format!("pitch {pitch} > 127")));
        }
        if !(1..=127).contains(&velocity) {
            return Err(ScoreError::InvalidNote(format!("velocity {velocity} not in 1..=127")));
        }
        if duration == 0 {
            return Err(ScoreError::InvalidNote("duration must be >= 1".into()));
        }
        Ok(Self { onset, pitch, duration, velocity })
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Melody,
    Accompaniment,
    Merged,
}

/// A 128×T velocity grid at 16th-note resolution.
///
/// Besides velocities the roll keeps an onset mask, so two adjacent notes of
/// the same pitch stay distinct notes. A cell that is active without an onset
/// flag continues the note sounding in the previous step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PianoRoll {
    role: Role,
    steps: usize,
    velocity: Vec<u8>,
    onset: Vec<bool>,
}

impl PianoRoll {
    pub fn new(role: Role, steps: usize) -> Result<Self, ScoreError> {
        if steps == 0 {
            return Err(ScoreError::EmptyRoll);
        }
        if steps % STEPS_PER_BAR != 0 {
            return Err(ScoreError::RaggedRoll { steps, bar: STEPS_PER_BAR });
        }
        Ok(Self {
            role,
            steps,
            velocity: vec![0; PITCHES * steps],
            onset: vec![false; PITCHES * steps],
        })
    }

    /// Builds a roll from notes; notes running past `steps` are truncated.
    pub fn from_notes(role: Role, steps: usize, notes: &[NoteEvent]) -> Result<Self, ScoreError> {
        let mut roll = Self::new(role, steps)?;
        for note in notes {
            roll.add_note(note);
        }
        Ok(roll)
    }

    /// Writes a note into the grid. Later notes overwrite earlier ones where
    /// they overlap; the onset of any note already present is kept.
    pub fn add_note(&mut self, note: &NoteEvent) {
        let start = note.onset as usize;
        if start >= self.steps {
            return;
        }
        let end = (note.end() as usize).min(self.steps);
        let p = note.pitch as usize;
        let base = p * self.steps;
        self.onset[base + start] = true;
        for t in start..end {
            self.velocity[base + t] = note.velocity;
        }
        // A note cut by this one resumes after it as a fresh note.
        if end < self.steps && self.velocity[base + end] > 0 && !self.onset[base + end] {
            self.onset[base + end] = true;
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn bars(&self) -> usize {
        self.steps / STEPS_PER_BAR
    }

    #[inline]
    pub fn velocity(&self, pitch: usize, step: usize) -> u8 {
        self.velocity[pitch * self.steps + step]
    }

    #[inline]
    pub fn is_active(&self, pitch: usize, step: usize) -> bool {
        self.velocity(pitch, step) > 0
    }

    /// True where a note starts.
    #[inline]
    pub fn is_onset(&self, pitch: usize, step: usize) -> bool {
        let i = pitch * self.steps + step;
        self.velocity[i] > 0 && (self.onset[i] || step == 0 || self.velocity[i - 1] == 0)
    }

    pub fn is_silent(&self) -> bool {
        self.velocity.iter().all(|&v| v == 0)
    }

    /// Raw velocity grid, pitch-major (`pitch * steps + step`).
    pub fn velocities(&self) -> &[u8] {
        &self.velocity
    }

    /// Extracts the note set, ordered by onset then pitch.
    pub fn notes(&self) -> Vec<NoteEvent> {
        let mut notes = Vec::new();
        for p in 0..PITCHES {
            let mut t = 0;
            while t < self.steps {
                if self.is_onset(p, t) {
                    let start = t;
                    t += 1;
                    while t < self.steps && self.is_active(p, t) && !self.is_onset(p, t) {
                        t += 1;
                    }
                    notes.push(NoteEvent {
                        onset: start as u32,
                        pitch: p as u8,
                        duration: (t - start) as u32,
                        velocity: self.velocity(p, start),
                    });
                } else {
                    t += 1;
                }
            }
        }
        notes.sort();
        notes
    }

    pub fn note_count(&self) -> usize {
        (0..PITCHES)
            .map(|p| (0..self.steps).filter(|&t| self.is_onset(p, t)).count())
            .sum()
    }

    /// Element-wise velocity maximum; onset flags are combined with OR.
    pub fn merge(&self, other: &PianoRoll) -> Result<PianoRoll, ScoreError> {
        if self.steps != other.steps {
            return Err(ScoreError::DimensionMismatch { left: self.steps, right: other.steps });
        }
        let velocity = self.velocity.iter().zip(&other.velocity).map(|(a, b)| *a.max(b)).collect();
        let onset = self
            .onset
            .iter()
            .zip(&other.onset)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(PianoRoll { role: Role::Merged, steps: self.steps, velocity, onset })
    }

    /// Copies `len` steps starting at `start`. A note already sounding at
    /// `start` becomes a new note in the slice.
    pub fn slice(&self, start: usize, len: usize) -> Result<PianoRoll, ScoreError> {
        if start + len > self.steps {
            return Err(ScoreError::DimensionMismatch { left: self.steps, right: start + len });
        }
        let mut out = PianoRoll::new(self.role, len)?;
        for p in 0..PITCHES {
            for t in 0..len {
                let i = p * self.steps + start + t;
                let j = p * len + t;
                out.velocity[j] = self.velocity[i];
                out.onset[j] = self.velocity[i] > 0 && (self.onset[i] || t == 0);
            }
        }
        Ok(out)
    }

    pub fn concat(rolls: &[PianoRoll]) -> Result<PianoRoll, ScoreError> {
        let first = rolls.first().ok_or(ScoreError::EmptyRoll)?;
        let steps: usize = rolls.iter().map(|r| r.steps).sum();
        let mut out = PianoRoll::new(first.role, steps)?;
        let mut offset = 0;
        for r in rolls {
            for p in 0..PITCHES {
                let src = p * r.steps;
                let dst = p * steps + offset;
                out.velocity[dst..dst + r.steps].copy_from_slice(&r.velocity[src..src + r.steps]);
                for t in 0..r.steps {
                    out.onset[dst + t] = r.is_onset(p, t);
                }
            }
            offset += r.steps;
        }
        Ok(out)
    }

    /// Pads with silence (or truncates) to `steps`.
    pub fn resized(&self, steps: usize) -> Result<PianoRoll, ScoreError> {
        let mut out = PianoRoll::new(self.role, steps)?;
        let n = steps.min(self.steps);
        for p in 0..PITCHES {
            for t in 0..n {
                out.velocity[p * steps + t] = self.velocity[p * self.steps + t];
                out.onset[p * steps + t] = self.is_onset(p, t);
            }
        }
        Ok(out)
    }

    /// Moves every note starting in `[start, end)` by `semitones`, clamping
    /// pitches to the MIDI range. Timing and velocities are left untouched.
    pub fn transpose_span(&self, start: usize, end: usize, semitones: i32) -> PianoRoll {
        if semitones == 0 {
            return self.clone();
        }
        let mut moved = Vec::new();
        let mut kept = Vec::new();
        for note in self.notes() {
            let onset = note.onset as usize;
            if onset >= start && onset < end {
                let pitch = (note.pitch as i32 + semitones).clamp(0, 127) as u8;
                moved.push(NoteEvent { pitch, ..note });
            } else {
                kept.push(note);
            }
        }
        let mut out = PianoRoll::new(self.role, self.steps).expect("same shape");
        for n in kept.iter().chain(&moved) {
            out.add_note(n);
        }
        out
    }
}

/// Element-wise maximum of the bridge and piano tracks (the accompaniment roll).
pub fn merge_accompaniment(ts: &TrackSet) -> Result<PianoRoll, ScoreError> {
    ts.bridge.merge(&ts.piano)
}

/// Bar boundaries of a piece.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarStructure {
    bar_starts: Vec<usize>,
    pub bars_per_segment: usize,
    pub time_signature: (u8, u8),
}

impl BarStructure {
    pub fn new(bar_starts: Vec<usize>) -> Result<Self, ScoreError> {
        if bar_starts.first() != Some(&0) {
            return Err(ScoreError::InvalidBars("first bar must start at step 0".into()));
        }
        if bar_starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScoreError::InvalidBars("bar starts must be strictly increasing".into()));
        }
        Ok(Self { bar_starts, bars_per_segment: BARS_PER_SEGMENT, time_signature: (4, 4) })
    }

    /// Regular 4/4 bars covering `steps`.
    pub fn uniform(steps: usize) -> Self {
        let starts = (0..steps.max(1)).step_by(STEPS_PER_BAR).collect();
        Self { bar_starts: starts, bars_per_segment: BARS_PER_SEGMENT, time_signature: (4, 4) }
    }

    /// One step index per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let mut starts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step = line.parse::<usize>().map_err(|_| {
                ScoreError::InvalidBars(format!("line {}: expected a step index, got {line:?}", i + 1))
            })?;
            starts.push(step);
        }
        Self::new(starts)
    }

    pub fn bar_starts(&self) -> &[usize] {
        &self.bar_starts
    }

    pub fn len(&self) -> usize {
        self.bar_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bar_starts.is_empty()
    }

    /// Step span `[start, end)` of bar `i`; the final bar ends at `total_steps`.
    pub fn span(&self, i: usize, total_steps: usize) -> Result<(usize, usize), ScoreError> {
        let start = *self
            .bar_starts
            .get(i)
            .ok_or(ScoreError::BarOutOfRange { index: i, count: self.bar_starts.len() })?;
        let end = self.bar_starts.get(i + 1).copied().unwrap_or(total_steps);
        Ok((start, end.max(start)))
    }
}

/// The three POP909 tracks plus annotations, all sharing one time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub melody: PianoRoll,
    pub bridge: PianoRoll,
    pub piano: PianoRoll,
    pub bars: BarStructure,
    pub chords: ChromaSequence,
    pub tempo: TempoMap,
}

impl TrackSet {
    pub fn new(
        melody: PianoRoll,
        bridge: PianoRoll,
        piano: PianoRoll,
        bars: BarStructure,
        chords: ChromaSequence,
        tempo: TempoMap,
    ) -> Result<Self, ScoreError> {
        let t = melody.steps();
        for other in [bridge.steps(), piano.steps(), chords.len()] {
            if other != t {
                return Err(ScoreError::DimensionMismatch { left: t, right: other });
            }
        }
        Ok(Self { melody, bridge, piano, bars, chords, tempo })
    }

    pub fn steps(&self) -> usize {
        self.melody.steps()
    }

    pub fn has_chords(&self) -> bool {
        self.chords.has_chords()
    }

    /// Replaces the chord annotations, padding or truncating them to the roll length.
    pub fn with_chords(mut self, chords: ChromaSequence) -> Self {
        self.chords = chords.resized(self.steps());
        self
    }
}

/// Cuts a piece into two-bar segments of [`SEGMENT_STEPS`] steps.
///
/// Bars are paired from the start; a pair is kept only if it spans exactly one
/// 4/4 segment. A trailing odd bar is dropped. Returns an empty list when no
/// pair qualifies.
pub fn segment(ts: &TrackSet) -> Vec<TrackSet> {
    let total = ts.steps();
    let starts = ts.bars.bar_starts();
    let mut out = Vec::new();
    let mut i = 0;
    while i + BARS_PER_SEGMENT <= starts.len() {
        let start = starts[i];
        let end = starts.get(i + BARS_PER_SEGMENT).copied().unwrap_or(total);
        if end - start == SEGMENT_STEPS && end <= total {
            let cut = |r: &PianoRoll| r.slice(start, SEGMENT_STEPS).expect("span checked");
            out.push(TrackSet {
                melody: cut(&ts.melody),
                bridge: cut(&ts.bridge),
                piano: cut(&ts.piano),
                bars: BarStructure::uniform(SEGMENT_STEPS),
                chords: ts.chords.slice(start, SEGMENT_STEPS),
                tempo: ts.tempo.starting_at(start),
            });
        }
        i += BARS_PER_SEGMENT;
    }
    out
}
