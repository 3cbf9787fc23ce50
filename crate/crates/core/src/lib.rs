//! Core building blocks for emotion-guided piano accompaniment.
//!
//! - [`score`]: MIDI and annotation I/O, piano rolls, chroma sequences, segmentation.
//! - [`emotion`]: the valence and arousal mappings, their quantizers and the
//!   curve validity gate.
//! - [`rules`]: chord comparison and bar-wise transposition.
//! - [`evaluation`]: Pearson flow correlation, MUTE F1 metrics, report tables and figures.
//! - [`synth`]: a deterministic generator of small POP909-style songs used by
//!   tests, demos and smoke training runs.

pub mod emotion;
pub mod evaluation;
pub mod rules;
pub mod score;
pub mod synth;

pub use emotion::{
    arousal_map, quantize_arousal, quantize_valence, resample_curve, validate_curve,
    valence_map, ArousalTensor, CurveValidityReport, EmotionCurve, EmotionKind,
    ValenceSequence, ValenceTable,
};
pub use score::{
    merge_accompaniment, normalize_root, parse_chord_annotations, parse_midi, segment,
    write_midi, BarStructure, ChordQuality, ChromaSequence, NoteEvent, PianoRoll, Role,
    TrackSet,
};
