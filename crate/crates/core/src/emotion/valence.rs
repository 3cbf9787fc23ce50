use super::curve::{EmotionCurve, EmotionKind};
use crate::score::{ChordQuality, ChromaSequence, STEPS_PER_BEAT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValenceError {
    #[error("column {step} has root {root}; valence mapping expects root-normalized chords")]
    NotNormalized { step: usize, root: u8 },
    #[error("weight {weight} for {quality:?} lies outside [-1, 1]")]
    WeightOutOfRange { quality: ChordQuality, weight: f64 },
}

/// Chord-quality weights on a `[-1, 1]` scale: positive is bright, negative dark.
///
/// | quality | weight |
/// |---------|--------|
/// | maj     |  1.0   |
/// | maj7    |  0.8   |
/// | 7       |  0.5   |
/// | aug     |  0.4   |
/// | sus2    |  0.3   |
/// | sus4    |  0.2   |
/// | min7    | -0.4   |
/// | min     | -0.6   |
/// | dim     | -1.0   |
///
/// Quantized valence maps the scale linearly onto `[0, 1]`, so a bar without
/// a chord (weight 0) sits at the neutral 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValenceTable {
    weights: Vec<(ChordQuality, f64)>,
}

pub const WEIGHT_MIN: f64 = -1.0;
pub const WEIGHT_MAX: f64 = 1.0;

impl Default for ValenceTable {
    fn default() -> Self {
        use ChordQuality::*;
        Self {
            weights: vec![
                (Maj, 1.0),
                (Maj7, 0.8),
                (Dom7, 0.5),
                (Aug, 0.4),
                (Sus2, 0.3),
                (Sus4, 0.2),
                (Min7, -0.4),
                (Min, -0.6),
                (Dim, -1.0),
            ],
        }
    }
}

impl ValenceTable {
    pub fn new(weights: Vec<(ChordQuality, f64)>) -> Result<Self, ValenceError> {
        for &(quality, weight) in &weights {
            if !(WEIGHT_MIN..=WEIGHT_MAX).contains(&weight) {
                return Err(ValenceError::WeightOutOfRange { quality, weight });
            }
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, q: ChordQuality) -> f64 {
        self.weights.iter().find(|w| w.0 == q).map_or(0.0, |w| w.1)
    }

    /// Quality whose weight is closest to `target`; ties keep table order.
    pub fn nearest_quality(&self, target: f64) -> ChordQuality {
        self.weights
            .iter()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .map(|w| w.0)
            .expect("table is not empty")
    }

    pub fn rescale(weight: f64) -> f64 {
        ((weight - WEIGHT_MIN) / (WEIGHT_MAX - WEIGHT_MIN)).clamp(0.0, 1.0)
    }
}

/// Best-matching chord quality of a root-normalized chroma column (cosine
/// similarity against the templates rooted on C). `None` for silence.
pub fn classify_column(col: &[f64; 12]) -> Option<ChordQuality> {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for q in ChordQuality::ALL {
        let t = q.template(0);
        let tn = (q.intervals().len() as f64).sqrt();
        let score = col.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (norm * tn);
        if score > best_score + 1e-12 {
            best_score = score;
            best = Some(q);
        }
    }
    best
}

/// Per-column weighted chroma: each annotated column is scaled to sum to its
/// chord-quality weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValenceSequence {
    values: Vec<[f64; 12]>,
    steps_per_column: usize,
}

impl ValenceSequence {
    pub fn values(&self) -> &[[f64; 12]] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid steps (16th notes) covered by one column.
    pub fn steps_per_column(&self) -> usize {
        self.steps_per_column
    }

    pub fn column_score(&self, t: usize) -> f64 {
        self.values[t].iter().sum()
    }
}

/// Maps a root-normalized beat-rate chroma sequence through the default table.
pub fn valence_map(c_bar: &ChromaSequence) -> Result<ValenceSequence, ValenceError> {
    valence_map_with(&ValenceTable::default(), c_bar, STEPS_PER_BEAT)
}

pub fn valence_map_with(
    table: &ValenceTable,
    c_bar: &ChromaSequence,
    steps_per_column: usize,
) -> Result<ValenceSequence, ValenceError> {
    let mut values = Vec::with_capacity(c_bar.len());
    for t in 0..c_bar.len() {
        let col = c_bar.column(t);
        match c_bar.root(t) {
            Some(r) if r != 0 => return Err(ValenceError::NotNormalized { step: t, root: r }),
            _ => {}
        }
        let total: f64 = col.iter().sum();
        let out = match classify_column(col) {
            Some(q) if total > 0.0 => {
                let w = table.weight(q);
                let mut v = [0.0; 12];
                for (o, c) in v.iter_mut().zip(col) {
                    *o = w * c / total;
                }
                v
            }
            _ => [0.0; 12],
        };
        values.push(out);
    }
    Ok(ValenceSequence { values, steps_per_column })
}

/// Sums the weighted chroma of each chord span and rescales onto `[0, 1]`.
///
/// Emits one sample at the start of every run of identical columns plus a
/// closing sample at the horizon. Columns without a chord score the neutral 0.5.
pub fn quantize_valence(v: &ValenceSequence) -> EmotionCurve {
    let spc = v.steps_per_column as u32;
    let horizon = (v.len() as u32 * spc).max(1);
    let mut samples: Vec<(u32, f64)> = Vec::new();
    let mut t = 0;
    while t < v.len() {
        let start = t;
        let mut sum = 0.0;
        while t < v.len() && v.values[t] == v.values[start] {
            sum += v.column_score(t);
            t += 1;
        }
        let mean = sum / (t - start) as f64;
        samples.push((start as u32 * spc, ValenceTable::rescale(mean)));
    }
    match samples.last() {
        Some(&(step, value)) if step < horizon => samples.push((horizon, value)),
        None => samples = vec![(0, 0.5), (horizon, 0.5)],
        _ => {}
    }
    EmotionCurve::new(EmotionKind::Valence, horizon, samples).expect("samples are well-formed")
}
