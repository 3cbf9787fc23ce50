use super::curve::{EmotionCurve, EmotionKind};
use crate::score::{PianoRoll, PITCHES, STEPS_PER_BAR};
use std::collections::BTreeMap;

pub const DURATION_BUCKETS: usize = 16;
pub const DENSITY_BUCKETS: usize = 8;
/// Channels of the encoder feature grid: duration marginals then density marginals.
pub const FEATURE_CHANNELS: usize = DURATION_BUCKETS + DENSITY_BUCKETS;
/// Normalizer of the arousal quantizer: `1 / (5 · T)` for a window of `T` steps.
pub const AROUSAL_SCALE: f64 = 5.0;

/// Pitch × time × duration-bucket × density-bucket note counts (128×T×16×8).
///
/// Stored sparsely; [`ArousalTensor::to_dense`] expands the full array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArousalTensor {
    steps: usize,
    cells: BTreeMap<(u8, u32, u8, u8), f64>,
}

impl ArousalTensor {
    pub fn shape(&self) -> [usize; 4] {
        [PITCHES, self.steps, DURATION_BUCKETS, DENSITY_BUCKETS]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, pitch: usize, step: usize, duration: usize, density: usize) -> f64 {
        self.cells
            .get(&(pitch as u8, step as u32, duration as u8, density as u8))
            .copied()
            .unwrap_or(0.0)
    }

    /// Nonzero cells as `((pitch, step, duration_bucket, density_bucket), mass)`.
    pub fn nonzero(&self) -> impl Iterator<Item = ((usize, usize, usize, usize), f64)> + '_ {
        self.cells
            .iter()
            .map(|(&(p, t, d, k), &m)| ((p as usize, t as usize, d as usize, k as usize), m))
    }

    pub fn is_zero(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum()
    }

    /// Mass of all cells with step in `[start, end)`.
    pub fn window_mass(&self, start: usize, end: usize) -> f64 {
        self.cells
            .iter()
            .filter(|(k, _)| (k.1 as usize) >= start && (k.1 as usize) < end)
            .map(|(_, v)| v)
            .sum()
    }

    /// Row-major dense copy indexed `[pitch][step][duration][density]`.
    pub fn to_dense(&self) -> Vec<f64> {
        let [_, t, d, k] = self.shape();
        let mut out = vec![0.0; PITCHES * t * d * k];
        for ((p, s, du, de), m) in self.nonzero() {
            out[((p * t + s) * d + du) * k + de] = m;
        }
        out
    }

    /// Encoder input `[channel][step][pitch]`: channels `0..16` hold the
    /// duration-bucket marginals, channels `16..24` the density-bucket marginals.
    pub fn feature_grid(&self) -> Vec<f32> {
        let t = self.steps;
        let mut out = vec![0f32; FEATURE_CHANNELS * t * PITCHES];
        for ((p, s, du, de), m) in self.nonzero() {
            out[(du * t + s) * PITCHES + p] += m as f32;
            out[((DURATION_BUCKETS + de) * t + s) * PITCHES + p] += m as f32;
        }
        out
    }
}

/// Groups the notes of a (merged) roll by pitch, onset, duration and onset density.
///
/// Every note adds one unit at `(pitch, onset, min(duration, 16) - 1, min(n, 8) - 1)`
/// where `n` is the number of notes starting on the same step.
pub fn arousal_map(merged: &PianoRoll) -> ArousalTensor {
    let notes = merged.notes();
    let mut onsets_per_step = vec![0usize; merged.steps()];
    for n in &notes {
        onsets_per_step[n.onset as usize] += 1;
    }
    let mut cells = BTreeMap::new();
    for n in &notes {
        let duration = (n.duration as usize).min(DURATION_BUCKETS) - 1;
        let density = onsets_per_step[n.onset as usize].min(DENSITY_BUCKETS) - 1;
        *cells.entry((n.pitch, n.onset, duration as u8, density as u8)).or_insert(0.0) += 1.0;
    }
    ArousalTensor { steps: merged.steps(), cells }
}

/// Arousal per bar: tensor mass in the window divided by `5 · T` with `T` the
/// window length, clamped to `[0, 1]`.
pub fn quantize_arousal(a: &ArousalTensor) -> EmotionCurve {
    quantize_arousal_windowed(a, STEPS_PER_BAR)
}

/// One sample at each window start plus a closing sample at the horizon.
pub fn quantize_arousal_windowed(a: &ArousalTensor, window: usize) -> EmotionCurve {
    let window = window.max(1);
    let horizon = a.steps.max(1) as u32;
    let mut masses = vec![0.0; a.steps.div_ceil(window).max(1)];
    for ((_, s, _, _), m) in a.nonzero() {
        masses[s / window] += m;
    }
    let mut samples: Vec<(u32, f64)> = masses
        .iter()
        .enumerate()
        .map(|(i, m)| ((i * window) as u32, (m / (AROUSAL_SCALE * window as f64)).clamp(0.0, 1.0)))
        .collect();
    let last = *samples.last().expect("at least one window");
    if last.0 < horizon {
        samples.push((horizon, last.1));
    }
    EmotionCurve::new(EmotionKind::Arousal, horizon, samples).expect("samples are well-formed")
}
