//! `/v1` request and response bodies, request validation and the generation call.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use emoacc_core::emotion::{validate_curve, EmotionCurve, EmotionKind};
use emoacc_core::evaluation::CorrelationReport;
use emoacc_core::rules::TranspositionDecision;
use emoacc_core::score::{parse_chord_annotations, parse_midi, TrackSet, STEPS_PER_BAR};
use emoacc_model::{generate, GenerationOptions, VaVae};
use serde::{Deserialize, Serialize};

pub const REASON_CHORDS_REQUIRED: &str = "chords required";

/// Body of `POST /v1/generate`. Curves stay untyped until validation so a
/// malformed curve is reported as a reason, not as a body rejection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    /// Base64-encoded MIDI file.
    pub melody: String,
    /// `start end label` annotation text; optional when the MIDI carries chord markers.
    #[serde(default)]
    pub chords: Option<String>,
    pub valence_curve: serde_json::Value,
    pub arousal_curve: serde_json::Value,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rules")]
    pub apply_rules: bool,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_rules() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredFlow {
    pub valence: EmotionCurve,
    pub arousal: EmotionCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Base64-encoded MIDI: one PIANO track plus chord markers.
    pub accompaniment: String,
    pub measured_flow: MeasuredFlow,
    pub correlation: Option<CorrelationReport>,
    pub transpositions: Vec<TranspositionDecision>,
    pub model_version: String,
}

/// A rejected request: `reasons` holds short machine-readable codes, `details`
/// the same failures with context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub reasons: Vec<String>,
    pub details: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestError {
    Invalid(Vec<(String, String)>),
    TooLong { bars: usize, max: usize },
}

impl RequestError {
    pub fn body(&self) -> ErrorBody {
        match self {
            RequestError::Invalid(list) => ErrorBody {
                error: "invalid request".into(),
                reasons: list.iter().map(|r| r.0.clone()).collect(),
                details: list.iter().map(|r| r.1.clone()).collect(),
            },
            RequestError::TooLong { bars, max } => ErrorBody {
                error: "melody too long".into(),
                reasons: vec!["melody too long".into()],
                details: vec![format!("melody spans {bars} bars, limit is {max}")],
            },
        }
    }
}

/// A request that passed validation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tracks: TrackSet,
    pub valence: EmotionCurve,
    pub arousal: EmotionCurve,
    pub options: GenerationOptions,
}

fn curve(field: &str, value: &serde_json::Value, kind: EmotionKind, out: &mut Vec<(String, String)>) -> Option<EmotionCurve> {
    let c: EmotionCurve = match serde_json::from_value(value.clone()) {
        Ok(c) => c,
        Err(e) => {
            out.push(("invalid curve".into(), format!("{field}: {e}")));
            return None;
        }
    };
    if c.kind() != kind {
        out.push(("wrong curve kind".into(), format!("{field}: kind is {:?}", c.kind())));
    }
    for r in validate_curve(&c).reasons {
        out.push((r.clone(), format!("{field}: {r}")));
    }
    Some(c)
}

/// Total validation: every failure is collected; `max_bars` bounds the melody length.
pub fn prepare(req: &GenerationRequest, max_bars: usize) -> Result<Prepared, RequestError> {
    let mut reasons = Vec::new();
    let tracks = match B64.decode(req.melody.trim()) {
        Err(e) => {
            reasons.push(("invalid melody".into(), format!("melody: not base64 ({e})")));
            None
        }
        Ok(bytes) => match parse_midi(&bytes) {
            Err(e) => {
                reasons.push(("invalid MIDI".into(), format!("melody: {e}")));
                None
            }
            Ok(ts) if ts.melody.is_silent() => {
                reasons.push(("empty melody".into(), "melody: no notes on the melody track".into()));
                None
            }
            Ok(ts) => Some(ts),
        },
    };
    let tracks = tracks.and_then(|ts| match &req.chords {
        Some(text) => match parse_chord_annotations(text.as_bytes(), &ts.tempo, Some(ts.steps())) {
            Ok(c) if c.has_chords() => Some(ts.with_chords(c)),
            Ok(_) => {
                reasons.push((REASON_CHORDS_REQUIRED.into(), "chords: no chord in the annotations".into()));
                None
            }
            Err(e) => {
                reasons.push(("invalid chords".into(), format!("chords: {e}")));
                None
            }
        },
        None if ts.has_chords() => Some(ts),
        None => {
            reasons.push((REASON_CHORDS_REQUIRED.into(), "chords: none given and none embedded".into()));
            None
        }
    });
    let valence = curve("valence_curve", &req.valence_curve, EmotionKind::Valence, &mut reasons);
    let arousal = curve("arousal_curve", &req.arousal_curve, EmotionKind::Arousal, &mut reasons);
    if !(req.temperature.is_finite() && req.temperature >= 0.0) {
        reasons.push(("invalid temperature".into(), format!("temperature: {} is not a finite value ≥ 0", req.temperature)));
    }
    if let Some(ts) = &tracks {
        let bars = ts.steps().div_ceil(STEPS_PER_BAR);
        if bars > max_bars && reasons.is_empty() {
            return Err(RequestError::TooLong { bars, max: max_bars });
        }
    }
    match (tracks, valence, arousal) {
        (Some(tracks), Some(valence), Some(arousal)) if reasons.is_empty() => Ok(Prepared {
            tracks,
            valence,
            arousal,
            options: GenerationOptions {
                temperature: req.temperature,
                seed: req.seed,
                apply_rules: req.apply_rules,
                ..Default::default()
            },
        }),
        _ => Err(RequestError::Invalid(reasons)),
    }
}

pub fn run(model: &VaVae, version: &str, p: &Prepared) -> emoacc_model::Result<GenerationResult> {
    let g = generate(model, &p.tracks, &p.valence, &p.arousal, &p.options)?;
    Ok(GenerationResult {
        accompaniment: B64.encode(g.midi(p.tracks.tempo.bpm())?),
        measured_flow: MeasuredFlow { valence: g.measured_valence, arousal: g.measured_arousal },
        correlation: g.correlation,
        transpositions: g.transpositions,
        model_version: version.to_string(),
    })
}

pub fn decode_midi(b64: &str) -> Result<Vec<u8>, base64::DecodeError> {
    B64.decode(b64.trim())
}

pub fn encode_midi(bytes: &[u8]) -> String {
    B64.encode(bytes)
}
