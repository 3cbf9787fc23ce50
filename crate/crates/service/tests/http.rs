use axum::body::Body;
use axum::http::{Request, StatusCode};
use candle_core::DType;
use emoacc_core::emotion::{EmotionCurve, EmotionKind};
use emoacc_core::score::write_tracks;
use emoacc_core::synth::synth_song;
use emoacc_model::{ModelConfig, VaVae};
use emoacc_service::api::{encode_midi, decode_midi};
use emoacc_service::{router, AppState, ErrorBody, GenerationResult, Health, LoadedModel, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

fn small_model() -> LoadedModel {
    let cfg = ModelConfig { latent: 8, encoder_hidden: 8, time_hidden: 8, pitch_hidden: 8, ..ModelConfig::desk() };
    LoadedModel { model: VaVae::new(&cfg, 1, DType::F32).unwrap(), version: "test-model".into() }
}

fn app(model: Option<LoadedModel>, max_bars: usize) -> axum::Router {
    router(Arc::new(AppState::new(model, 2, max_bars)))
}

fn wave(kind: EmotionKind, horizon: u32) -> Value {
    let c = EmotionCurve::new(kind, horizon, vec![(0, 0.05), (horizon / 4, 0.05), (horizon / 4 + 1, 0.95), (3 * horizon / 4, 0.95), (3 * horizon / 4 + 1, 0.05), (horizon, 0.05)]).unwrap();
    serde_json::to_value(c).unwrap()
}

fn request(bars: usize) -> Value {
    let song = synth_song(21, bars);
    let t = song.tracks.steps() as u32;
    json!({
        "melody": encode_midi(&song.midi().unwrap()),
        "valence_curve": wave(EmotionKind::Valence, t),
        "arousal_curve": wave(EmotionKind::Arousal, t),
        "temperature": 0.0,
        "seed": 3,
    })
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &axum::Router, body: &Value) -> (StatusCode, Value) {
    call(app, "POST", "/v1/generate", Some(body.to_string())).await
}

fn reasons(v: &Value) -> Vec<String> {
    serde_json::from_value::<ErrorBody>(v.clone()).unwrap().reasons
}

#[tokio::test]
async fn health_reports_degraded_then_ok() {
    let (s, v) = call(&app(None, 64), "GET", "/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: Health = serde_json::from_value(v).unwrap();
    assert_eq!((h.status.as_str(), h.model_version), ("degraded", None));

    let (_, v) = call(&app(Some(small_model()), 64), "GET", "/v1/health", None).await;
    let h: Health = serde_json::from_value(v).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.model_version.as_deref(), Some("test-model"));
}

#[tokio::test]
async fn generate_without_model_is_503() {
    let (s, v) = post(&app(None, 64), &request(4)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(reasons(&v), ["model not loaded"]);
}

#[tokio::test]
async fn generation_is_deterministic_and_covers_the_melody() {
    let app = app(Some(small_model()), 64);
    let body = request(6);
    let (s, v) = post(&app, &body).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: GenerationResult = serde_json::from_value(v).unwrap();
    let (_, again) = post(&app, &body).await;
    assert_eq!(again["accompaniment"], json!(r.accompaniment));
    assert_eq!(r.model_version, "test-model");
    assert_eq!(r.measured_flow.valence.horizon(), 96);
    assert_eq!(r.measured_flow.arousal.horizon(), 96);
    assert_eq!(r.transpositions.len(), 6);
    // an untrained decoder emits no onsets, so only the file framing is checked
    let midi = decode_midi(&r.accompaniment).unwrap();
    assert!(midi.starts_with(b"MThd"));
}

#[tokio::test]
async fn flat_curve_is_rejected_with_flatness() {
    let mut body = request(4);
    body["valence_curve"] = json!({"kind": "valence", "horizon": 64, "samples": [[0, 0.5], [64, 0.5]]});
    let (s, v) = post(&app(Some(small_model()), 64), &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(reasons(&v), ["flatness"]);
}

#[tokio::test]
async fn missing_chords_are_required() {
    let song = synth_song(4, 4);
    let bare = write_tracks(&[("MELODY", &song.tracks.melody)], 100.0, None).unwrap();
    let mut body = request(4);
    body["melody"] = json!(encode_midi(&bare));
    let (s, v) = post(&app(Some(small_model()), 64), &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(reasons(&v), ["chords required"]);

    // supplying annotations fixes it
    body["chords"] = json!(song.annotations());
    let (s, _) = post(&app(Some(small_model()), 64), &body).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn malformed_inputs_map_to_400() {
    let app = app(Some(small_model()), 64);
    let (s, v) = call(&app, "POST", "/v1/generate", Some("{not json".into())).await;
    assert_eq!((s, reasons(&v)), (StatusCode::BAD_REQUEST, vec!["invalid JSON".to_string()]));

    let mut body = request(4);
    body["melody"] = json!("%%%");
    body["arousal_curve"] = json!({"kind": "arousal", "horizon": 64, "samples": [[0, 2.0], [64, 0.1]]});
    body["temperature"] = json!(-1.0);
    let (s, v) = post(&app, &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(reasons(&v), ["invalid melody", "invalid curve", "invalid temperature"]);

    let mut body = request(4);
    body["melody"] = json!(encode_midi(b"MThd garbage"));
    let (s, v) = post(&app, &body).await;
    assert_eq!((s, reasons(&v)), (StatusCode::BAD_REQUEST, vec!["invalid MIDI".to_string()]));

    let mut body = request(4);
    body["arousal_curve"] = wave(EmotionKind::Valence, 64);
    let (s, v) = post(&app, &body).await;
    assert_eq!((s, reasons(&v)), (StatusCode::BAD_REQUEST, vec!["wrong curve kind".to_string()]));
}

#[tokio::test]
async fn long_melody_is_413() {
    let (s, v) = post(&app(Some(small_model()), 4), &request(6)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(reasons(&v), ["melody too long"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_answers_during_generation() {
    let app = app(Some(small_model()), 64);
    let body = request(16);
    let gen = {
        let app = app.clone();
        tokio::spawn(async move { post(&app, &body).await })
    };
    for _ in 0..5 {
        let (s, _) = call(&app, "GET", "/v1/health", None).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(gen.await.unwrap().0, StatusCode::OK);
}

#[test]
fn config_reads_environment_overrides() {
    let env = |k: &str| match k {
        "EMOACC_PORT" => Some("9000".to_string()),
        "EMOACC_POOL_SIZE" => Some("3".to_string()),
        "EMOACC_CHECKPOINT" => Some("/tmp/ckpt".to_string()),
        _ => None,
    };
    let c = ServiceConfig::from_env_with(env).unwrap();
    assert_eq!((c.port, c.pool_size, c.max_bars), (9000, 3, 64));
    assert_eq!(c.checkpoint.as_deref(), Some(std::path::Path::new("/tmp/ckpt")));
    assert!(ServiceConfig::from_env_with(|k| (k == "EMOACC_POOL_SIZE").then(|| "0".to_string())).is_err());
}
