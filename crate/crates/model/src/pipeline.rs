//! Curve-guided generation: melody, chords and emotion curves in, accompaniment out.
//!
//! The curves reach the encoders through two conditioners built at the
//! segment level: chord qualities are re-chosen toward the target valence
//! (roots kept), and a chord-tone rhythm roll with the target note count per
//! bar feeds the arousal encoder. The decoded segments are joined, corrected by
//! the transposition rules and measured back.

use crate::data::{Batch, Example};
use crate::error::{ModelError, Result};
use crate::latent::sample_latent;
use crate::vae::VaVae;
use emoacc_core::emotion::{EmotionCurve, ValenceTable, AROUSAL_SCALE};
use emoacc_core::evaluation::{flow_correlation, measure_flow, CorrelationReport};
use emoacc_core::rules::{apply_constraint, decide, SelectionPolicy, TranspositionDecision};
use emoacc_core::score::{
    write_tracks, Chord, ChordQuality, ChromaSequence, NoteEvent, PianoRoll, Role, TrackSet, SEGMENT_STEPS,
    STEPS_PER_BAR, STEPS_PER_BEAT,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Cost of replacing an annotated chord quality, in weight units.
pub const REQUALIFY_PENALTY: f64 = 0.25;
/// Velocity of the rhythm-roll conditioner notes.
const CONDITIONER_VELOCITY: u8 = 80;
const CONDITIONER_LOW: u8 = 48;
const CONDITIONER_HIGH: u8 = 84;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationOptions {
    pub temperature: f64,
    pub seed: u64,
    pub apply_rules: bool,
    pub policy: SelectionPolicy,
    pub requalify_penalty: f64,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed: 0,
            apply_rules: true,
            policy: SelectionPolicy::default(),
            requalify_penalty: REQUALIFY_PENALTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Accompaniment over the melody's time axis, rules applied if requested.
    pub accompaniment: PianoRoll,
    /// Per-step chords estimated from the valence decoder output.
    pub chords: ChromaSequence,
    /// Per-step chords given to the encoders after requalification.
    pub conditioning_chords: ChromaSequence,
    pub measured_valence: EmotionCurve,
    pub measured_arousal: EmotionCurve,
    /// `None` when the accompaniment is silent and no chord was decoded.
    pub correlation: Option<CorrelationReport>,
    pub transpositions: Vec<TranspositionDecision>,
    /// Per segment, the `[32][32]` attention map.
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl Generation {
    /// One PIANO track with the decoded chords as markers.
    pub fn midi(&self, bpm: f64) -> Result<Vec<u8>> {
        write_tracks(&[("PIANO", &self.accompaniment)], bpm, Some(&self.chords))
            .map_err(|e| ModelError::Data(e.to_string()))
    }
}

/// Curve value at each step of a piece `steps` long, the curve stretched onto the piece.
fn per_step(curve: &EmotionCurve, steps: usize, padded: usize) -> Vec<f64> {
    let scale = curve.horizon() as f64 / steps.max(1) as f64;
    (0..padded).map(|s| curve.value_at(s as f64 * scale)).collect()
}

/// Quality minimizing `|W(q) − (2v − 1)| + penalty·[q ≠ annotated]`, root kept.
/// Ties keep the annotated quality, then table order.
pub fn requalify(chord: Chord, valence: f64, table: &ValenceTable, penalty: f64) -> Chord {
    let target = 2.0 * valence.clamp(0.0, 1.0) - 1.0;
    let cost = |q: ChordQuality| (table.weight(q) - target).abs() + if q == chord.quality { 0.0 } else { penalty };
    let mut best = chord.quality;
    let mut best_cost = cost(best);
    for q in ChordQuality::ALL {
        let c = cost(q);
        if c < best_cost - 1e-12 {
            best = q;
            best_cost = c;
        }
    }
    Chord::new(chord.root, best)
}

/// Requalifies every beat toward the valence at its first step.
pub fn requalify_chords(chords: &ChromaSequence, valence: &[f64], penalty: f64) -> ChromaSequence {
    let table = ValenceTable::default();
    let out: Vec<Option<Chord>> = (0..chords.len())
        .map(|t| {
            let beat = t - t % STEPS_PER_BEAT;
            chords.chord_at(t).map(|c| requalify(c, valence[beat], &table, penalty))
        })
        .collect();
    ChromaSequence::from_chords(&out)
}

/// Notes per bar whose measured arousal equals `a`: each note adds one unit of
/// mass and a bar's arousal is mass / (5 · 16).
pub fn notes_for_arousal(a: f64) -> usize {
    (a.clamp(0.0, 1.0) * AROUSAL_SCALE * STEPS_PER_BAR as f64).round() as usize
}

/// Chord-tone roll with `notes_for_arousal(mean bar arousal)` notes in each bar,
/// spread over evenly spaced onsets and stacked upward from C3.
pub fn rhythm_roll(chords: &ChromaSequence, arousal: &[f64]) -> PianoRoll {
    let steps = chords.len();
    let mut notes = Vec::new();
    for start in (0..steps).step_by(STEPS_PER_BAR) {
        let end = (start + STEPS_PER_BAR).min(steps);
        let len = end - start;
        let a = arousal[start..end].iter().sum::<f64>() / len as f64;
        let n = notes_for_arousal(a);
        if n == 0 {
            continue;
        }
        let onsets = n.min(len);
        for i in 0..onsets {
            let on = start + i * len / onsets;
            let next = start + (i + 1) * len / onsets;
            let stack = n / onsets + usize::from(i < n % onsets);
            let chord = chords.chord_at(on).unwrap_or(Chord::new(0, ChordQuality::Maj));
            let pcs = chord.quality.intervals().iter().map(|&k| (chord.root as usize + k) % 12).collect::<Vec<_>>();
            let pool = (CONDITIONER_LOW..=CONDITIONER_HIGH).filter(|p| pcs.contains(&(*p as usize % 12)));
            for p in pool.take(stack) {
                notes.push(NoteEvent::new(p, on as u32, (next - on) as u32, CONDITIONER_VELOCITY).expect("in range"));
            }
        }
    }
    PianoRoll::from_notes(Role::Accompaniment, steps, &notes).expect("notes inside the roll")
}

/// Encoder inputs for every segment of a piece padded to whole segments.
pub struct Conditioning {
    pub examples: Vec<Example>,
    pub chords: ChromaSequence,
    pub rhythm: PianoRoll,
}

pub fn condition(
    tracks: &TrackSet,
    valence: &EmotionCurve,
    arousal: &EmotionCurve,
    penalty: f64,
) -> Result<Conditioning> {
    let steps = tracks.steps();
    if steps == 0 {
        return Err(ModelError::Data("melody is empty".into()));
    }
    if !tracks.has_chords() {
        return Err(ModelError::Data("chords required".into()));
    }
    let padded = steps.div_ceil(SEGMENT_STEPS) * SEGMENT_STEPS;
    let melody = tracks.melody.resized(padded).map_err(|e| ModelError::Data(e.to_string()))?;
    let chords = requalify_chords(&tracks.chords.resized(padded), &per_step(valence, steps, padded), penalty);
    let rhythm = rhythm_roll(&chords, &per_step(arousal, steps, padded));
    let examples = (0..padded)
        .step_by(SEGMENT_STEPS)
        .map(|s| {
            let cut = |r: &PianoRoll| r.slice(s, SEGMENT_STEPS).expect("padded to whole segments");
            let seg_rhythm = cut(&rhythm);
            Example::conditioned(&cut(&melody), &chords.slice(s, SEGMENT_STEPS), &seg_rhythm, &seg_rhythm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Conditioning { examples, chords, rhythm })
}

/// Full pipeline. Deterministic for fixed `(model, inputs, options)`.
pub fn generate(
    model: &VaVae,
    tracks: &TrackSet,
    valence: &EmotionCurve,
    arousal: &EmotionCurve,
    opts: &GenerationOptions,
) -> Result<Generation> {
    let steps = tracks.steps();
    let cond = condition(tracks, valence, arousal, opts.requalify_penalty)?;
    let refs: Vec<&Example> = cond.examples.iter().collect();
    let batch = Batch::new(&refs, model.dtype())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (lv, la) = model.encode(&batch)?;
    let zv = sample_latent(&lv, opts.temperature, &mut rng)?;
    let za = sample_latent(&la, opts.temperature, &mut rng)?;
    let decoded = model.decode(&zv, &za, &batch.melody)?;

    let data = |e: emoacc_core::score::ScoreError| ModelError::Data(e.to_string());
    let raw = PianoRoll::concat(&decoded.rolls).map_err(data)?.slice(0, steps).map_err(data)?;
    let chords = ChromaSequence::estimated(&decoded.chroma.concat()).upsample(STEPS_PER_BEAT).slice(0, steps);

    let transpositions = decide(&raw, &tracks.chords, &tracks.bars, &opts.policy).map_err(data)?;
    let accompaniment = if opts.apply_rules {
        apply_constraint(&raw, &tracks.bars, &transpositions, &opts.policy).map_err(data)?
    } else {
        raw
    };
    let (measured_valence, measured_arousal) =
        measure_flow(&accompaniment, &chords).map_err(|e| ModelError::Data(e.to_string()))?;
    let correlation = flow_correlation("generated", valence, arousal, &accompaniment, &chords).ok();
    Ok(Generation {
        accompaniment,
        chords,
        conditioning_chords: cond.chords.slice(0, steps),
        measured_valence,
        measured_arousal,
        correlation,
        transpositions,
        attention: decoded.attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use candle_core::DType;
    use emoacc_core::emotion::{arousal_map, quantize_arousal, EmotionKind};
    use emoacc_core::synth::synth_song;

    fn curve(kind: EmotionKind, horizon: u32, values: &[f64]) -> EmotionCurve {
        let n = values.len() - 1;
        let samples = values.iter().enumerate().map(|(i, v)| ((i as u32 * horizon) / n as u32, *v)).collect();
        EmotionCurve::new(kind, horizon, samples).unwrap()
    }

    #[test]
    fn requalify_moves_toward_target_weight() {
        let t = ValenceTable::default();
        let c = Chord::new(2, ChordQuality::Maj);
        assert_eq!(requalify(c, 1.0, &t, 0.25), c);
        assert_eq!(requalify(c, 0.0, &t, 0.25), Chord::new(2, ChordQuality::Dim));
        // 0.55 → weight 0.1: maj costs 0.9, sus4 costs 0.1 + 0.25
        assert_eq!(requalify(c, 0.55, &t, 0.25).quality, ChordQuality::Sus4);
        // a large penalty keeps the annotation
        assert_eq!(requalify(c, 0.0, &t, 5.0), c);
    }

    #[test]
    fn rhythm_roll_hits_the_requested_arousal() {
        let chords = ChromaSequence::from_chords(&vec![Some(Chord::new(7, ChordQuality::Dom7)); 64]);
        let levels = [0.0, 0.1, 0.5, 1.0];
        let a: Vec<f64> = levels.iter().flat_map(|v| std::iter::repeat_n(*v, STEPS_PER_BAR)).collect();
        let roll = rhythm_roll(&chords, &a);
        let measured = quantize_arousal(&arousal_map(&roll));
        for (bar, v) in levels.iter().enumerate() {
            let want = notes_for_arousal(*v) as f64 / 80.0;
            assert!((measured.value_at((bar * STEPS_PER_BAR) as f64) - want).abs() < 1e-12, "bar {bar}");
        }
        assert!(roll.notes().iter().all(|n| [7, 11, 2, 5].contains(&(n.pitch % 12))));
    }

    #[test]
    fn generation_covers_the_melody_and_is_reproducible() {
        let cfg = ModelConfig { latent: 8, encoder_hidden: 8, time_hidden: 8, pitch_hidden: 8, ..ModelConfig::desk() };
        let model = VaVae::new(&cfg, 3, DType::F32).unwrap();
        let song = synth_song(11, 5);
        let t = song.tracks.steps() as u32;
        let v = curve(EmotionKind::Valence, t, &[0.2, 0.9, 0.3]);
        let a = curve(EmotionKind::Arousal, t, &[0.1, 0.6, 0.2]);
        let opts = GenerationOptions { seed: 4, ..Default::default() };
        let g = generate(&model, &song.tracks, &v, &a, &opts).unwrap();
        assert_eq!(g.accompaniment.steps(), song.tracks.steps());
        assert_eq!(g.chords.len(), song.tracks.steps());
        assert_eq!(g.measured_valence.horizon(), t);
        assert_eq!(g.measured_arousal.horizon(), t);
        assert_eq!(g.attention.len(), 3);
        let again = generate(&model, &song.tracks, &v, &a, &opts).unwrap();
        assert_eq!(g.midi(120.0).unwrap(), again.midi(120.0).unwrap());

        let no_chords = song.tracks.clone().with_chords(ChromaSequence::silent(0));
        assert!(matches!(generate(&model, &no_chords, &v, &a, &opts), Err(ModelError::Data(m)) if m == "chords required"));
    }
}
