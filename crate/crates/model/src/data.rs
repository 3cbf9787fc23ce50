//! Two-bar segments as model inputs and targets.

use crate::decoder::NoteQuery;
use crate::error::{ModelError, Result};
use crate::nn::SparseGrid;
use candle_core::{DType, Device, Tensor};
use emoacc_core::emotion::{arousal_map, valence_map, FEATURE_CHANNELS};
use emoacc_core::score::{
    merge_accompaniment, normalize_root, ChromaSequence, NoteEvent, PianoRoll, Role, TrackSet, PITCHES,
    SEGMENT_STEPS, STEPS_PER_BEAT, VALENCE_STEPS,
};

pub const DURATION_BITS: usize = 4;
pub const MAX_DURATION: u32 = 1 << DURATION_BITS;

/// Duration in steps → bits of `min(d, 16) − 1`, most significant first.
pub fn duration_bits(d: u32) -> [f32; DURATION_BITS] {
    let v = d.clamp(1, MAX_DURATION) - 1;
    std::array::from_fn(|k| ((v >> (DURATION_BITS - 1 - k)) & 1) as f32)
}

pub fn bits_to_duration(bits: &[bool]) -> u32 {
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32) + 1
}

/// One segment's encoder inputs, decoder conditioning and targets.
#[derive(Debug, Clone)]
pub struct Example {
    /// `[24, 32, 128]` arousal feature grid.
    pub grid: Vec<f32>,
    /// `[8, 12]` root-normalized valence columns.
    pub valence_in: Vec<f32>,
    /// `[8, 12]` annotated beat chroma (decoder target).
    pub valence_target: Vec<f32>,
    /// `[8, 24]` melody pitch classes of the current and the next beat.
    pub melody: Vec<f32>,
    /// `[32, 128]` onset grid of the accompaniment.
    pub onsets: Vec<f32>,
    /// Accompaniment notes (target of the PianoTree decoder).
    pub notes: Vec<NoteEvent>,
    pub chords: ChromaSequence,
}

impl Example {
    /// Training example: the accompaniment is both the arousal source and the target.
    pub fn from_segment(seg: &TrackSet) -> Result<Self> {
        let acc = merge_accompaniment(seg).map_err(|e| ModelError::Data(e.to_string()))?;
        Self::conditioned(&seg.melody, &seg.chords, &acc, &acc)
    }

    /// Example whose arousal input comes from `arousal_source` and whose targets come
    /// from `target`. All rolls span one segment.
    pub fn conditioned(
        melody: &PianoRoll,
        chords: &ChromaSequence,
        arousal_source: &PianoRoll,
        target: &PianoRoll,
    ) -> Result<Self> {
        for (what, len) in [
            ("melody", melody.steps()),
            ("chords", chords.len()),
            ("arousal source", arousal_source.steps()),
            ("target", target.steps()),
        ] {
            if len != SEGMENT_STEPS {
                return Err(ModelError::Data(format!("{what} spans {len} steps, expected {SEGMENT_STEPS}")));
            }
        }
        let grid = arousal_map(arousal_source).feature_grid();
        debug_assert_eq!(grid.len(), FEATURE_CHANNELS * SEGMENT_STEPS * PITCHES);

        let beats = chords.downsample(STEPS_PER_BEAT);
        let v = valence_map(&normalize_root(&beats)).map_err(|e| ModelError::Data(e.to_string()))?;
        let valence_in: Vec<f32> = v.values().iter().flatten().map(|x| *x as f32).collect();
        let valence_target: Vec<f32> =
            beats.columns().iter().flatten().map(|x| if *x > 0.5 { 1.0 } else { 0.0 }).collect();

        let mut pcs = vec![[0f32; 12]; VALENCE_STEPS + 1];
        for (b, col) in pcs.iter_mut().take(VALENCE_STEPS).enumerate() {
            for s in b * STEPS_PER_BEAT..(b + 1) * STEPS_PER_BEAT {
                for p in 0..PITCHES {
                    if melody.is_active(p, s) {
                        col[p % 12] = 1.0;
                    }
                }
            }
        }
        let melody_ctx: Vec<f32> = (0..VALENCE_STEPS).flat_map(|b| pcs[b].into_iter().chain(pcs[b + 1])).collect();

        let notes = target.notes();
        let mut onsets = vec![0f32; SEGMENT_STEPS * PITCHES];
        for n in &notes {
            onsets[n.onset as usize * PITCHES + n.pitch as usize] = 1.0;
        }
        Ok(Self {
            grid,
            valence_in,
            valence_target,
            melody: melody_ctx,
            onsets,
            notes,
            chords: chords.clone(),
        })
    }

    pub fn target_roll(&self) -> PianoRoll {
        PianoRoll::from_notes(Role::Accompaniment, SEGMENT_STEPS, &self.notes).expect("segment length")
    }
}

/// A stacked minibatch.
pub struct Batch {
    /// Nonzero cells of the `[B, 24, 32, 128]` arousal grids.
    pub grid: SparseGrid,
    pub valence_in: Tensor,
    pub valence_target: Tensor,
    pub melody: Tensor,
    pub onsets: Tensor,
    pub notes: NoteQuery,
    pub size: usize,
}

impl Batch {
    pub fn new(examples: &[&Example], dtype: DType) -> Result<Self> {
        if examples.is_empty() {
            return Err(ModelError::Data("empty batch".into()));
        }
        let b = examples.len();
        let dev = Device::Cpu;
        let stack = |f: &dyn Fn(&Example) -> &[f32], shape: &[usize]| -> Result<Tensor> {
            let data: Vec<f32> = examples.iter().flat_map(|e| f(e).iter().copied()).collect();
            let mut dims = vec![b];
            dims.extend_from_slice(shape);
            Ok(Tensor::from_vec(data, dims, &dev)?.to_dtype(dtype)?)
        };
        let (mut rows, mut onehot, mut bits) = (Vec::new(), Vec::new(), Vec::new());
        for (i, e) in examples.iter().enumerate() {
            for n in &e.notes {
                rows.push((i * SEGMENT_STEPS + n.onset as usize) as u32);
                let mut oh = [0f32; PITCHES];
                oh[n.pitch as usize] = 1.0;
                onehot.extend_from_slice(&oh);
                bits.extend_from_slice(&duration_bits(n.duration));
            }
        }
        let n = rows.len();
        Ok(Self {
            grid: SparseGrid::from_items(
                &examples.iter().map(|e| e.grid.as_slice()).collect::<Vec<_>>(),
                FEATURE_CHANNELS,
                SEGMENT_STEPS,
                PITCHES,
            ),
            valence_in: stack(&|e| &e.valence_in, &[VALENCE_STEPS, 12])?,
            valence_target: stack(&|e| &e.valence_target, &[VALENCE_STEPS, 12])?,
            melody: stack(&|e| &e.melody, &[VALENCE_STEPS, 24])?,
            onsets: stack(&|e| &e.onsets, &[SEGMENT_STEPS, PITCHES])?,
            notes: NoteQuery {
                rows: Tensor::from_vec(rows, n, &dev)?,
                pitch_onehot: Tensor::from_vec(onehot, (n, PITCHES), &dev)?.to_dtype(dtype)?,
                bits: Some(Tensor::from_vec(bits, (n, DURATION_BITS), &dev)?.to_dtype(dtype)?),
            },
            size: b,
        })
    }
}
