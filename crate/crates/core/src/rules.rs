//! Chord-alignment constraint on generated accompaniment.
//!
//! For each bar the annotated chord chroma `C^pre` is compared with the
//! pitch-class profile of the generated notes `C^gene`. The transposition
//! `ΔC` is read as an argmax over the 12 circular rotations of `C^gene`:
//!
//! ```text
//! ΔC = argmax_{k ∈ [-6, 5]} cos(C^pre, rot_k(C^gene))
//! ```
//!
//! A single cosine has nothing to maximize over, so the rotation set is the
//! reading used by default. The literal single-cosine form is still available
//! as [`RuleMode::SingleCosine`]; it scores bars but never moves them.
//!
//! Bars whose best rotation beats the untouched bar by a clear margin are
//! pitch-shifted by `ΔC` semitones.

use crate::score::{rotate_chroma, BarStructure, ChromaSequence, PianoRoll, ScoreError};
use serde::{Deserialize, Serialize};

/// Shifts considered, shortest way round the pitch-class circle.
pub const SHIFTS: std::ops::RangeInclusive<i32> = -6..=5;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMode {
    /// Best of the 12 rotations of the generated chroma.
    #[default]
    Rotations,
    /// `cos(C^pre, C^gene)` only; the shift is always 0.
    SingleCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranspositionDecision {
    #[serde(rename = "bar")]
    pub bar_index: usize,
    #[serde(rename = "shift")]
    pub best_shift: i32,
    pub similarity: f64,
    /// Cosine of the unshifted bar.
    #[serde(skip)]
    pub baseline_similarity: f64,
    pub selected: bool,
}

impl TranspositionDecision {
    pub fn gain(&self) -> f64 {
        self.similarity - self.baseline_similarity
    }
}

/// Which bars get shifted: gain above `min_gain` and within the top
/// `1 - quantile` share of gains across the piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub min_gain: f64,
    pub quantile: f64,
    pub mode: RuleMode,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self { min_gain: 0.1, quantile: 0.75, mode: RuleMode::Rotations }
    }
}

impl SelectionPolicy {
    /// Sets `selected` on every decision.
    pub fn mark(&self, decisions: &mut [TranspositionDecision]) {
        let mut gains: Vec<f64> = decisions.iter().map(|d| d.gain()).collect();
        let cut = if gains.is_empty() {
            0.0
        } else {
            crate::evaluation::quantile(&mut gains, self.quantile)
        };
        for d in decisions {
            let g = d.gain();
            d.selected = d.best_shift != 0 && g > self.min_gain && g >= cut;
        }
    }
}

fn cosine(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Unit-length pitch-class histogram of the notes starting in bar `i`.
/// Octaves fold together; a silent bar gives the zero vector.
pub fn chord_of_generated(roll: &PianoRoll, bars: &BarStructure, i: usize) -> Result<[f64; 12], ScoreError> {
    let (start, end) = bars.span(i, roll.steps())?;
    let mut h = [0.0; 12];
    for n in roll.notes() {
        let t = n.onset as usize;
        if t >= start && t < end {
            h[n.pitch as usize % 12] += 1.0;
        }
    }
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        h.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(h)
}

/// Annotated chord chroma of bar `i`: the chord columns of the bar summed.
pub fn annotated_chord(chords: &ChromaSequence, bars: &BarStructure, i: usize) -> Result<[f64; 12], ScoreError> {
    let (start, end) = bars.span(i, chords.len())?;
    let mut h = [0.0; 12];
    for col in &chords.columns()[start.min(chords.len())..end.min(chords.len())] {
        for (a, b) in h.iter_mut().zip(col) {
            *a += b;
        }
    }
    Ok(h)
}

/// Best rotation of `c_gen` against `c_pre`, preferring shift 0 and then the
/// smallest `|shift|` among ties. `selected` uses the default policy's
/// minimum gain; [`SelectionPolicy::mark`] applies the full policy.
pub fn delta_c(c_pre: &[f64; 12], c_gen: &[f64; 12]) -> TranspositionDecision {
    delta_c_with(c_pre, c_gen, RuleMode::Rotations)
}

pub fn delta_c_with(c_pre: &[f64; 12], c_gen: &[f64; 12], mode: RuleMode) -> TranspositionDecision {
    let baseline = cosine(c_pre, c_gen);
    let mut best_shift = 0;
    let mut best = baseline;
    if mode == RuleMode::Rotations {
        let mut order: Vec<i32> = SHIFTS.collect();
        order.sort_by_key(|k| (k.abs(), *k));
        for k in order {
            let s = cosine(c_pre, &rotate_chroma(c_gen, k));
            if s > best + TIE_EPS {
                best = s;
                best_shift = k;
            }
        }
    }
    let gain = best - baseline;
    TranspositionDecision {
        bar_index: 0,
        best_shift,
        similarity: best,
        baseline_similarity: baseline,
        selected: best_shift != 0 && gain > SelectionPolicy::default().min_gain,
    }
}

/// Decisions for every bar, marked by `policy`.
pub fn decide(
    roll: &PianoRoll,
    chords: &ChromaSequence,
    bars: &BarStructure,
    policy: &SelectionPolicy,
) -> Result<Vec<TranspositionDecision>, ScoreError> {
    let mut out = Vec::with_capacity(bars.len());
    for i in 0..bars.len() {
        let pre = annotated_chord(chords, bars, i)?;
        let gen = chord_of_generated(roll, bars, i)?;
        out.push(TranspositionDecision { bar_index: i, ..delta_c_with(&pre, &gen, policy.mode) });
    }
    policy.mark(&mut out);
    Ok(out)
}

/// Shifts the bars `policy` selects by their best shift. Notes are assigned to
/// the bar they start in; pitches clamp to `[0, 127]`.
pub fn apply_constraint(
    roll: &PianoRoll,
    bars: &BarStructure,
    decisions: &[TranspositionDecision],
    policy: &SelectionPolicy,
) -> Result<PianoRoll, ScoreError> {
    let mut marked = decisions.to_vec();
    policy.mark(&mut marked);
    let mut out = roll.clone();
    for d in marked.iter().filter(|d| d.selected) {
        let (start, end) = bars.span(d.bar_index, roll.steps())?;
        out = out.transpose_span(start, end, d.best_shift);
    }
    Ok(out)
}

pub fn decisions_to_json(decisions: &[TranspositionDecision]) -> String {
    serde_json::to_string(decisions).expect("decisions serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{ChordQuality, NoteEvent, Role};

    #[test]
    fn identical_chords_need_no_shift() {
        let c = ChordQuality::Maj.template(0);
        let d = delta_c(&c, &c);
        assert_eq!(d.best_shift, 0);
        assert!((d.similarity - 1.0).abs() < 1e-12);
        assert!(!d.selected);
    }

    #[test]
    fn d_major_moves_down_a_tone() {
        let d = delta_c(&ChordQuality::Maj.template(0), &ChordQuality::Maj.template(2));
        assert_eq!(d.best_shift, -2);
        assert!((d.similarity - 1.0).abs() < 1e-12);
        assert!(d.selected);
    }

    #[test]
    fn zero_vectors() {
        let d = delta_c(&[0.0; 12], &[0.0; 12]);
        assert_eq!((d.best_shift, d.similarity, d.selected), (0, 0.0, false));
    }

    #[test]
    fn single_cosine_never_shifts() {
        let d = delta_c_with(&ChordQuality::Maj.template(0), &ChordQuality::Maj.template(2), RuleMode::SingleCosine);
        assert_eq!(d.best_shift, 0);
        assert_eq!(d.similarity, 0.0);
    }

    #[test]
    fn one_selected_bar_moves_up_two() {
        let notes: Vec<NoteEvent> = [(60, 0), (64, 4), (60, 16), (67, 20)]
            .iter()
            .map(|&(p, t)| NoteEvent::new(p, t, 2, 90).unwrap())
            .collect();
        let roll = PianoRoll::from_notes(Role::Accompaniment, 32, &notes).unwrap();
        let bars = BarStructure::uniform(32);
        let d = [
            TranspositionDecision { bar_index: 0, best_shift: 0, similarity: 1.0, baseline_similarity: 1.0, selected: false },
            TranspositionDecision { bar_index: 1, best_shift: 2, similarity: 1.0, baseline_similarity: 0.2, selected: true },
        ];
        let out = apply_constraint(&roll, &bars, &d, &SelectionPolicy::default()).unwrap();
        let pitches: Vec<(u32, u8)> = out.notes().iter().map(|n| (n.onset, n.pitch)).collect();
        assert_eq!(pitches, vec![(0, 60), (4, 64), (16, 62), (20, 69)]);
    }

    #[test]
    fn json_audit_format() {
        let d = TranspositionDecision { bar_index: 3, best_shift: -2, similarity: 1.0, baseline_similarity: 0.0, selected: true };
        assert_eq!(decisions_to_json(&[d]), r#"[{"bar":3,"shift":-2,"similarity":1.0,"selected":true}]"#);
    }
}
