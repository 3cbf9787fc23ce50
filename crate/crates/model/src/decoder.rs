//! Valence (chroma) decoder and the PianoTree decoder with note summary,
//! relative self-attention and per-note duration decoding.

use crate::attention::RelativeAttention;
use crate::config::ModelConfig;
use crate::error::{check_dim, Result};
use crate::nn::{Linear, Lstm, ParamStore, State};
use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

/// Initial onset logit, about one onset per 100 cells.
pub const ONSET_PRIOR_LOGIT: f64 = -4.6;

/// Binarizes logits at probability 0.5, detached from the graph.
fn binarize(logits: &Tensor) -> Result<Tensor> {
    Ok(logits.gt(0.0)?.to_dtype(logits.dtype())?.detach())
}

/// Autoregressive 12-bit chroma decoder, one step per beat.
#[derive(Clone)]
pub struct ValenceDecoder {
    init: Linear,
    rnn: Lstm,
    out: Linear,
    cfg: ModelConfig,
}

impl ValenceDecoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            init: Linear::new(ps, rng, "dec_v.init", cfg.latent, cfg.valence_decoder_hidden)?,
            rnn: Lstm::new(ps, rng, "dec_v.rnn", cfg.valence_decoder_input(), cfg.valence_decoder_hidden)?,
            out: Linear::new(ps, rng, "dec_v.out", cfg.valence_decoder_hidden, 12)?,
            cfg: cfg.clone(),
        })
    }

    /// `z: [B, latent]`, `melody: [B, 8, 24]` (current and next beat pitch classes).
    /// With `target: [B, 8, 12]` the previous column is teacher-forced, otherwise the
    /// previous prediction (thresholded at 0.5) is fed back. Returns logits `[B, 8, 12]`.
    pub fn forward(&self, z: &Tensor, melody: &Tensor, target: Option<&Tensor>) -> Result<Tensor> {
        let (b, n) = z.dims2()?;
        check_dim("valence decoder latent", "feature", self.cfg.latent, n)?;
        let (mb, steps, mc) = melody.dims3()?;
        check_dim("valence decoder melody", "batch", b, mb)?;
        check_dim("valence decoder melody", "time", self.cfg.valence_steps, steps)?;
        check_dim("valence decoder melody", "feature", self.cfg.valence_context - 12, mc)?;
        let h0 = self.init.forward(z)?.tanh()?;
        let mut state: State = (h0.clone(), h0.zeros_like()?);
        let mut prev = Tensor::zeros((b, 12), z.dtype(), z.device())?;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let ctx = melody.narrow(1, t, 1)?.squeeze(1)?;
            let x = Tensor::cat(&[z, &prev, &ctx], 1)?;
            state = self.rnn.step(&x, &state)?;
            let logits = self.out.forward(&state.0)?;
            prev = match target {
                Some(y) => y.narrow(1, t, 1)?.squeeze(1)?,
                None => binarize(&logits)?,
            };
            outs.push(logits);
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// How the previous onset vector is chosen at each step.
#[derive(Clone, Copy)]
pub enum Tokens<'a> {
    /// Ground-truth onsets `[B, L, 128]`.
    Forced(&'a Tensor),
    /// The model's own thresholded predictions.
    Free,
}

pub struct PianoTreeOutput {
    /// `[B, L, 128]`
    pub onset_logits: Tensor,
    /// Top pitch-LSTM state per step, `[B, L, pitch_hidden]`.
    pub pitch_states: Tensor,
    /// Note summary `[B, L, summary]`.
    pub summary: Tensor,
    /// Attention weights of step `t`, `[B, 1, t + 1]`.
    pub attention: Vec<Tensor>,
}

impl PianoTreeOutput {
    /// Lower-triangular `[L][L]` attention map of batch item `b`.
    pub fn attention_map(&self, b: usize) -> Result<Vec<Vec<f64>>> {
        let l = self.attention.len();
        let mut m = vec![vec![0.0; l]; l];
        for (t, w) in self.attention.iter().enumerate() {
            let row = w.narrow(0, b, 1)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            m[t][..row.len()].copy_from_slice(&row);
        }
        Ok(m)
    }
}

/// Notes whose durations are decoded: flat row index `b·L + t`, pitch one-hot and
/// (for training) the duration bits, most significant first.
pub struct NoteQuery {
    pub rows: Tensor,
    pub pitch_onehot: Tensor,
    pub bits: Option<Tensor>,
}

#[derive(Clone)]
pub struct PianoTreeDecoder {
    token: Linear,
    init: Linear,
    time: Lstm,
    summary: Linear,
    attention: RelativeAttention,
    pitch: Vec<Lstm>,
    onset: Linear,
    dur_init: Linear,
    dur: Lstm,
    dur_out: Linear,
    cfg: ModelConfig,
}

impl PianoTreeDecoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let z = 2 * cfg.latent;
        let mut pitch = Vec::with_capacity(cfg.pitch_layers);
        for layer in 0..cfg.pitch_layers {
            let input = if layer == 0 { 2 * cfg.summary } else { cfg.pitch_hidden };
            pitch.push(Lstm::new(ps, rng, &format!("dec_a.pitch{layer}"), input, cfg.pitch_hidden)?);
        }
        let onset = Linear::new(ps, rng, "dec_a.onset", cfg.pitch_hidden, cfg.pitches)?;
        // onsets are rare: start every pitch at a low prior rate
        let prior = Tensor::full(ONSET_PRIOR_LOGIT, cfg.pitches, ps.device())?.to_dtype(ps.dtype())?;
        ps.get("dec_a.onset.bias").expect("just created").set(&prior)?;
        Ok(Self {
            token: Linear::new(ps, rng, "dec_a.token", cfg.pitches, cfg.token_embed)?,
            init: Linear::new(ps, rng, "dec_a.init", z, cfg.time_hidden)?,
            time: Lstm::new(ps, rng, "dec_a.time", z + cfg.token_embed, cfg.time_hidden)?,
            summary: Linear::new(ps, rng, "dec_a.summary", cfg.time_hidden, cfg.summary)?,
            attention: RelativeAttention::new(
                ps,
                rng,
                "dec_a.attention",
                cfg.time_hidden,
                cfg.summary,
                cfg.attention_dim,
                cfg.segment_steps,
            )?,
            pitch,
            onset,
            dur_init: Linear::new(ps, rng, "dec_a.dur_init", cfg.pitch_hidden + cfg.pitches, cfg.duration_hidden)?,
            dur: Lstm::new(ps, rng, "dec_a.dur", 1, cfg.duration_hidden)?,
            dur_out: Linear::new(ps, rng, "dec_a.dur_out", cfg.duration_hidden, 1)?,
            cfg: cfg.clone(),
        })
    }

    pub fn attention(&self) -> &RelativeAttention {
        &self.attention
    }

    /// `z: [B, 2·latent]` (arousal ⊕ valence sample), decoded over the segment.
    pub fn forward(&self, z: &Tensor, tokens: Tokens<'_>) -> Result<PianoTreeOutput> {
        let (b, n) = z.dims2()?;
        check_dim("pianotree latent", "feature", 2 * self.cfg.latent, n)?;
        let steps = self.cfg.segment_steps;
        if let Tokens::Forced(y) = tokens {
            check_dim("pianotree targets", "batch", b, y.dim(0)?)?;
            check_dim("pianotree targets", "time", steps, y.dim(1)?)?;
            check_dim("pianotree targets", "pitch", self.cfg.pitches, y.dim(2)?)?;
        }
        let (dtype, device) = (z.dtype(), z.device());
        let h0 = self.init.forward(z)?.tanh()?;
        let mut time: State = (h0.clone(), h0.zeros_like()?);
        let mut pitch: Vec<State> = self
            .pitch
            .iter()
            .map(|l| l.zero_state(b, dtype, device))
            .collect::<candle_core::Result<_>>()?;
        let mut prev = Tensor::zeros((b, self.cfg.pitches), dtype, device)?;
        let mut summaries = Vec::with_capacity(steps);
        let (mut logits, mut states, mut attention) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..steps {
            let x = Tensor::cat(&[z, &self.token.forward(&prev)?], 1)?;
            time = self.time.step(&x, &time)?;
            let s_t = self.summary.forward(&time.0)?;
            summaries.push(s_t.clone());
            let keys = Tensor::stack(&summaries, 1)?;
            let (ctx, w) = self.attention.forward(&time.0.unsqueeze(1)?, &keys, t)?;
            let mut input = Tensor::cat(&[&s_t, &ctx.squeeze(1)?], 1)?;
            for (layer, state) in self.pitch.iter().zip(pitch.iter_mut()) {
                *state = layer.step(&input, state)?;
                input = state.0.clone();
            }
            let out = self.onset.forward(&input)?;
            prev = match tokens {
                Tokens::Forced(y) => y.narrow(1, t, 1)?.squeeze(1)?,
                Tokens::Free => binarize(&out)?,
            };
            logits.push(out);
            states.push(input);
            attention.push(w);
        }
        Ok(PianoTreeOutput {
            onset_logits: Tensor::stack(&logits, 1)?,
            pitch_states: Tensor::stack(&states, 1)?,
            summary: Tensor::stack(&summaries, 1)?,
            attention,
        })
    }

    /// Duration-bit logits `[N, bits]` for the queried notes. With `q.bits` the previous
    /// bit is teacher-forced, otherwise greedy predictions are fed back.
    pub fn durations(&self, out: &PianoTreeOutput, q: &NoteQuery) -> Result<Tensor> {
        let (b, l, h) = out.pitch_states.dims3()?;
        let n = q.rows.dim(0)?;
        let nbits = self.cfg.duration_bits;
        let (dtype, device) = (out.pitch_states.dtype(), out.pitch_states.device());
        if n == 0 {
            return Ok(Tensor::zeros((0, nbits), dtype, device)?);
        }
        let rows = out.pitch_states.reshape((b * l, h))?.index_select(&q.rows, 0)?;
        let h0 = self.dur_init.forward(&Tensor::cat(&[&rows, &q.pitch_onehot.to_dtype(dtype)?], 1)?)?.tanh()?;
        let mut state: State = (h0.clone(), h0.zeros_like()?);
        let mut prev = Tensor::zeros((n, 1), dtype, device)?;
        let mut outs = Vec::with_capacity(nbits);
        for k in 0..nbits {
            state = self.dur.step(&prev, &state)?;
            let logit = self.dur_out.forward(&state.0)?;
            prev = match &q.bits {
                Some(bits) => bits.narrow(1, k, 1)?.to_dtype(dtype)?,
                None => binarize(&logit)?,
            };
            outs.push(logit);
        }
        Ok(Tensor::cat(&outs, 1)?)
    }
}
