//! The VA-VAE: two encoders, the valence decoder and the PianoTree decoder.

use crate::config::ModelConfig;
use crate::data::{bits_to_duration, Batch, DURATION_BITS};
use crate::decoder::{NoteQuery, PianoTreeDecoder, PianoTreeOutput, Tokens, ValenceDecoder};
use crate::encoder::{ArousalEncoder, ValenceEncoder};
use crate::error::Result;
use crate::latent::{sample_latent, GaussianLatent};
use crate::nn::ParamStore;
use candle_core::{DType, Device, Tensor};
use emoacc_core::score::{NoteEvent, PianoRoll, Role, PITCHES, SEGMENT_STEPS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Velocity of decoded notes.
pub const DECODED_VELOCITY: u8 = 80;

pub struct VaVae {
    cfg: ModelConfig,
    params: ParamStore,
    enc_a: ArousalEncoder,
    enc_v: ValenceEncoder,
    dec_v: ValenceDecoder,
    dec_a: PianoTreeDecoder,
}

/// Everything a training step needs from one forward pass.
pub struct Forward {
    pub latent_valence: GaussianLatent,
    pub latent_arousal: GaussianLatent,
    /// `[B, 8, 12]`
    pub valence_logits: Tensor,
    pub pianotree: PianoTreeOutput,
    /// `[N, 4]` for the target notes.
    pub duration_logits: Tensor,
}

/// Teacher-forcing switches for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Forcing {
    pub valence: bool,
    pub pianotree: bool,
}

/// Free-running decode of a batch.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub rolls: Vec<PianoRoll>,
    /// Per item, 8 binarized beat chroma columns.
    pub chroma: Vec<Vec<[f64; 12]>>,
    /// Per item, the `[32][32]` attention map.
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl VaVae {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_a = ArousalEncoder::new(&mut ps, &mut rng, cfg)?;
        let enc_v = ValenceEncoder::new(&mut ps, &mut rng, cfg)?;
        let dec_v = ValenceDecoder::new(&mut ps, &mut rng, cfg)?;
        let dec_a = PianoTreeDecoder::new(&mut ps, &mut rng, cfg)?;
        Ok(Self { cfg: cfg.clone(), params: ps, enc_a, enc_v, dec_v, dec_a })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn pianotree(&self) -> &PianoTreeDecoder {
        &self.dec_a
    }

    /// `(valence posterior, arousal posterior)`.
    pub fn encode(&self, batch: &Batch) -> Result<(GaussianLatent, GaussianLatent)> {
        Ok((self.enc_v.forward(&batch.valence_in)?, self.enc_a.forward_sparse(&batch.grid)?))
    }

    /// Training forward pass with reparameterized latents.
    pub fn forward(&self, batch: &Batch, forcing: Forcing, rng: &mut ChaCha8Rng) -> Result<Forward> {
        let (lv, la) = self.encode(batch)?;
        let zv = sample_latent(&lv, 1.0, rng)?;
        let za = sample_latent(&la, 1.0, rng)?;
        let valence_logits =
            self.dec_v.forward(&zv, &batch.melody, forcing.valence.then_some(&batch.valence_target))?;
        let tokens = if forcing.pianotree { Tokens::Forced(&batch.onsets) } else { Tokens::Free };
        let pianotree = self.dec_a.forward(&Tensor::cat(&[&za, &zv], 1)?, tokens)?;
        let duration_logits = self.dec_a.durations(&pianotree, &batch.notes)?;
        Ok(Forward { latent_valence: lv, latent_arousal: la, valence_logits, pianotree, duration_logits })
    }

    /// Free-running decode from latent samples `z_v, z_a: [B, latent]` and melody context `[B, 8, 24]`.
    pub fn decode(&self, z_v: &Tensor, z_a: &Tensor, melody: &Tensor) -> Result<Decoded> {
        let b = z_v.dim(0)?;
        let valence_logits = self.dec_v.forward(z_v, melody, None)?;
        let out = self.dec_a.forward(&Tensor::cat(&[z_a, z_v], 1)?, Tokens::Free)?;

        let on = out.onset_logits.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        let mut found: Vec<(usize, usize, usize)> = Vec::new();
        for (i, item) in on.iter().enumerate() {
            for (t, row) in item.iter().enumerate() {
                for (p, x) in row.iter().enumerate() {
                    if *x > 0.0 {
                        found.push((i, t, p));
                    }
                }
            }
        }
        let n = found.len();
        let rows: Vec<u32> = found.iter().map(|&(i, t, _)| (i * SEGMENT_STEPS + t) as u32).collect();
        let mut onehot = vec![0f32; n * PITCHES];
        for (k, &(_, _, p)) in found.iter().enumerate() {
            onehot[k * PITCHES + p] = 1.0;
        }
        let q = NoteQuery {
            rows: Tensor::from_vec(rows, n, &Device::Cpu)?,
            pitch_onehot: Tensor::from_vec(onehot, (n, PITCHES), &Device::Cpu)?,
            bits: None,
        };
        let dur = self.dec_a.durations(&out, &q)?.to_dtype(DType::F64)?;
        let dur = if n == 0 { Vec::new() } else { dur.to_vec2::<f64>()? };

        let mut notes: Vec<Vec<NoteEvent>> = vec![Vec::new(); b];
        for (k, &(i, t, p)) in found.iter().enumerate() {
            let bits: Vec<bool> = dur[k].iter().take(DURATION_BITS).map(|x| *x > 0.0).collect();
            let d = bits_to_duration(&bits).min((SEGMENT_STEPS - t) as u32);
            notes[i].push(NoteEvent::new(p as u8, t as u32, d, DECODED_VELOCITY).expect("in range"));
        }
        let rolls = notes
            .iter()
            .map(|ns| PianoRoll::from_notes(Role::Accompaniment, SEGMENT_STEPS, ns).expect("segment length"))
            .collect();
        let vl = valence_logits.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        let chroma = vl
            .iter()
            .map(|item| item.iter().map(|col| std::array::from_fn(|c| if col[c] > 0.0 { 1.0 } else { 0.0 })).collect())
            .collect();
        let attention = (0..b).map(|i| out.attention_map(i)).collect::<Result<_>>()?;
        Ok(Decoded { rolls, chroma, attention })
    }

    /// Encodes, samples at `temperature` and decodes free-running.
    pub fn reconstruct(&self, batch: &Batch, temperature: f64, rng: &mut ChaCha8Rng) -> Result<Decoded> {
        let (lv, la) = self.encode(batch)?;
        let zv = sample_latent(&lv, temperature, rng)?;
        let za = sample_latent(&la, temperature, rng)?;
        self.decode(&zv, &za, &batch.melody)
    }
}
