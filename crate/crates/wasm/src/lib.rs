//! Browser bindings: the curve gate, a ΔC transposition explorer and flow
//! measurement of a MIDI file. Every export takes and returns JSON strings.

use emoacc_core::emotion::{validate_curve, EmotionCurve, EmotionKind};
use emoacc_core::evaluation::measure_flow;
use emoacc_core::rules::{delta_c, SHIFTS};
use emoacc_core::score::{
    merge_accompaniment, parse_chord_annotations, parse_midi, rotate_chroma, Chord, ChordQuality,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct GateReport {
    curve: EmotionCurve,
    variance: f64,
    extreme_points: usize,
    valid: bool,
    reasons: Vec<String>,
}

/// Builds a curve from evenly spaced `values` over `horizon` steps and runs the gate.
pub fn gate(kind: &str, horizon: u32, values: &[f64]) -> Result<String, String> {
    let kind = match kind {
        "valence" => EmotionKind::Valence,
        "arousal" => EmotionKind::Arousal,
        other => return Err(format!("unknown curve kind {other:?}")),
    };
    if values.len() < 2 || horizon == 0 {
        return Err("need at least two values and a positive horizon".into());
    }
    let n = (values.len() - 1) as f64;
    let mut samples: Vec<(u32, f64)> = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let step = (i as f64 * horizon as f64 / n).round() as u32;
        if samples.last().is_some_and(|s| s.0 == step) {
            continue;
        }
        samples.push((step, v.clamp(0.0, 1.0)));
    }
    let curve = EmotionCurve::new(kind, horizon, samples).map_err(|e| e.to_string())?;
    let r = validate_curve(&curve);
    let report = GateReport { curve, variance: r.variance, extreme_points: r.extreme_point_count, valid: r.valid, reasons: r.reasons };
    Ok(serde_json::to_string(&report).expect("serializable"))
}

/// Validates a Curve JSON document as the service would.
pub fn gate_json(curve_json: &str) -> Result<String, String> {
    let c = EmotionCurve::from_json(curve_json).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&validate_curve(&c)).expect("serializable"))
}

#[derive(Serialize)]
struct Explorer {
    pre: [f64; 12],
    generated: [f64; 12],
    /// `(shift, cosine)` for every candidate shift.
    candidates: Vec<(i32, f64)>,
    best_shift: i32,
    similarity: f64,
    baseline_similarity: f64,
}

fn chord(root: u8, quality: &str) -> Result<Chord, String> {
    let q = ChordQuality::from_label(quality).ok_or_else(|| format!("unknown quality {quality:?}"))?;
    Ok(Chord::new(root % 12, q))
}

fn cosine(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>().sqrt(), b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// ΔC between an annotated and a generated chord, with every candidate score.
pub fn explore_delta_c(pre_root: u8, pre_quality: &str, gen_root: u8, gen_quality: &str) -> Result<String, String> {
    let pre = chord(pre_root, pre_quality)?.chroma();
    let generated = chord(gen_root, gen_quality)?.chroma();
    let d = delta_c(&pre, &generated);
    let candidates = SHIFTS.map(|k| (k, cosine(&pre, &rotate_chroma(&generated, k)))).collect();
    let e = Explorer {
        pre,
        generated,
        candidates,
        best_shift: d.best_shift,
        similarity: d.similarity,
        baseline_similarity: d.baseline_similarity,
    };
    Ok(serde_json::to_string(&e).expect("serializable"))
}

#[derive(Serialize)]
struct Flow {
    steps: usize,
    notes: usize,
    valence: EmotionCurve,
    arousal: EmotionCurve,
}

/// Measured valence and arousal of a MIDI file's accompaniment. Chords come
/// from `chords_text` when non-empty, else from markers in the file.
pub fn flow_of_midi(bytes: &[u8], chords_text: &str) -> Result<String, String> {
    let mut ts = parse_midi(bytes).map_err(|e| e.to_string())?;
    if !chords_text.trim().is_empty() {
        let c = parse_chord_annotations(chords_text.as_bytes(), &ts.tempo, Some(ts.steps())).map_err(|e| e.to_string())?;
        ts = ts.with_chords(c);
    }
    if !ts.has_chords() {
        return Err("chords required".into());
    }
    let acc = merge_accompaniment(&ts).map_err(|e| e.to_string())?;
    let (valence, arousal) = measure_flow(&acc, &ts.chords).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&Flow { steps: acc.steps(), notes: acc.note_count(), valence, arousal }).expect("serializable"))
}

#[wasm_bindgen(js_name = gateCurve)]
pub fn gate_curve_js(kind: &str, horizon: u32, values: &[f64]) -> Result<String, JsValue> {
    gate(kind, horizon, values).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = gateCurveJson)]
pub fn gate_json_js(curve_json: &str) -> Result<String, JsValue> {
    gate_json(curve_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = exploreDeltaC)]
pub fn explore_delta_c_js(pre_root: u8, pre_quality: &str, gen_root: u8, gen_quality: &str) -> Result<String, JsValue> {
    explore_delta_c(pre_root, pre_quality, gen_root, gen_quality).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = flowOfMidi)]
pub fn flow_of_midi_js(bytes: &[u8], chords_text: &str) -> Result<String, JsValue> {
    flow_of_midi(bytes, chords_text).map_err(|e| JsValue::from_str(&e))
}
