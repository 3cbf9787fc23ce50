use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum variance a guiding curve must show.
pub const MIN_VARIANCE: f64 = 0.15;
/// Maximum number of interior extreme points a guiding curve may have.
pub const MAX_EXTREME_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("a curve needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample steps must be strictly increasing (sample {0})")]
    NonIncreasing(usize),
    #[error("sample {index} has value {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("sample step {step} lies beyond the horizon {horizon}")]
    BeyondHorizon { step: u32, horizon: u32 },
    #[error("cannot resample a span of {span} steps onto {target} integer grid points")]
    GridTooFine { span: u32, target: usize },
    #[error("target grid needs at least 2 points")]
    GridTooCoarse,
    #[error("invalid curve JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionKind {
    Valence,
    Arousal,
}

/// A valence or arousal flow: `(step, value)` samples with values in `[0, 1]`.
///
/// Serialized as `{"kind": ..., "horizon": T, "samples": [[step, value], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct EmotionCurve {
    kind: EmotionKind,
    horizon: u32,
    samples: Vec<(u32, f64)>,
}

#[derive(Deserialize)]
struct RawCurve {
    kind: EmotionKind,
    horizon: u32,
    samples: Vec<(u32, f64)>,
}

impl TryFrom<RawCurve> for EmotionCurve {
    type Error = CurveError;

    fn try_from(raw: RawCurve) -> Result<Self, Self::Error> {
        EmotionCurve::new(raw.kind, raw.horizon, raw.samples)
    }
}

impl EmotionCurve {
    pub fn new(kind: EmotionKind, horizon: u32, samples: Vec<(u32, f64)>) -> Result<Self, CurveError> {
        if samples.len() < 2 {
            return Err(CurveError::TooFewSamples(samples.len()));
        }
        for (i, &(step, value)) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(CurveError::OutOfRange { index: i, value });
            }
            if i > 0 && step <= samples[i - 1].0 {
                return Err(CurveError::NonIncreasing(i));
            }
            if step > horizon {
                return Err(CurveError::BeyondHorizon { step, horizon });
            }
        }
        Ok(Self { kind, horizon, samples })
    }

    pub fn from_json(text: &str) -> Result<Self, CurveError> {
        serde_json::from_str(text).map_err(|e| CurveError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("curve serializes")
    }

    pub fn kind(&self) -> EmotionKind {
        self.kind
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn samples(&self) -> &[(u32, f64)] {
        &self.samples
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    /// Piecewise-linear value at `step`, held constant outside the sampled span.
    pub fn value_at(&self, step: f64) -> f64 {
        let first = self.samples[0];
        let last = *self.samples.last().expect("at least two samples");
        if step <= first.0 as f64 {
            return first.1;
        }
        if step >= last.0 as f64 {
            return last.1;
        }
        let i = self.samples.partition_point(|s| (s.0 as f64) <= step);
        let (s0, v0) = self.samples[i - 1];
        let (s1, v1) = self.samples[i];
        let w = (step - s0 as f64) / (s1 - s0) as f64;
        v0 + w * (v1 - v0)
    }

    /// Time-weighted mean over the sampled span.
    pub fn mean(&self) -> f64 {
        let span = self.span() as f64;
        self.samples
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
            .sum::<f64>()
            / span
    }

    /// `(1/T) ∫ (X - X̄)² dt` of the piecewise-linear curve over its sampled span.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let span = self.span() as f64;
        self.samples
            .windows(2)
            .map(|w| {
                let h = (w[1].0 - w[0].0) as f64;
                let a = w[0].1 - mean;
                let b = w[1].1 - mean;
                h * (a * a + a * b + b * b) / 3.0
            })
            .sum::<f64>()
            / span
    }

    fn span(&self) -> u32 {
        self.samples.last().expect("at least two samples").0 - self.samples[0].0
    }

    /// Interior extreme points: after merging flat runs, every run other than
    /// the first and last that is strictly above or below both neighbours.
    pub fn extreme_points(&self) -> usize {
        let mut runs: Vec<f64> = Vec::with_capacity(self.samples.len());
        for &(_, v) in &self.samples {
            if runs.last() != Some(&v) {
                runs.push(v);
            }
        }
        runs.windows(3)
            .filter(|w| (w[1] > w[0] && w[1] > w[2]) || (w[1] < w[0] && w[1] < w[2]))
            .count()
    }
}

/// Outcome of the guiding-curve gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveValidityReport {
    pub variance: f64,
    pub extreme_point_count: usize,
    pub valid: bool,
    pub reasons: Vec<String>,
}

pub const REASON_FLATNESS: &str = "flatness";
pub const REASON_TOO_MANY_EXTREMA: &str = "too many extreme points";

/// A guiding curve must vary (variance > 0.15) and may not have more than
/// five interior extreme points.
pub fn validate_curve(c: &EmotionCurve) -> CurveValidityReport {
    let variance = c.variance();
    let extreme_point_count = c.extreme_points();
    let mut reasons = Vec::new();
    if variance <= MIN_VARIANCE {
        reasons.push(REASON_FLATNESS.to_string());
    }
    if extreme_point_count > MAX_EXTREME_POINTS {
        reasons.push(REASON_TOO_MANY_EXTREMA.to_string());
    }
    CurveValidityReport { variance, extreme_point_count, valid: reasons.is_empty(), reasons }
}

/// Linear interpolation onto `target_steps` evenly spaced integer steps
/// spanning the curve's first to last sample. Grid positions are rounded to
/// the nearest step, so the grid may not be finer than one point per step.
pub fn resample_curve(c: &EmotionCurve, target_steps: usize) -> Result<EmotionCurve, CurveError> {
    if target_steps < 2 {
        return Err(CurveError::GridTooCoarse);
    }
    let first = c.samples[0].0;
    let span = c.span();
    if target_steps > span as usize + 1 {
        return Err(CurveError::GridTooFine { span, target: target_steps });
    }
    let samples = (0..target_steps)
        .map(|i| {
            let step = if i + 1 == target_steps {
                first + span
            } else {
                first + ((i as f64 * span as f64) / (target_steps - 1) as f64).round() as u32
            };
            (step, c.value_at(step as f64))
        })
        .collect();
    EmotionCurve::new(c.kind, c.horizon, samples)
}
