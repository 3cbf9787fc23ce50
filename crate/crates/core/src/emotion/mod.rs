//! Conversions between music and the valence/arousal domain.
//!
//! Valence is read from root-normalized chords through a chord-quality weight
//! table. Arousal is read from note density of the accompaniment through a
//! pitch × time × duration × density grouping. Both quantize to
//! [`EmotionCurve`]s that share the JSON contract used by the CLI and service.

mod arousal;
mod curve;
mod valence;

pub use arousal::{
    arousal_map, quantize_arousal, quantize_arousal_windowed, ArousalTensor, AROUSAL_SCALE,
    DENSITY_BUCKETS, DURATION_BUCKETS, FEATURE_CHANNELS,
};
pub use curve::{
    resample_curve, validate_curve, CurveError, CurveValidityReport, EmotionCurve, EmotionKind,
    MAX_EXTREME_POINTS, MIN_VARIANCE, REASON_FLATNESS, REASON_TOO_MANY_EXTREMA,
};
pub use valence::{
    classify_column, quantize_valence, valence_map, valence_map_with, ValenceError,
    ValenceSequence, ValenceTable,
};
