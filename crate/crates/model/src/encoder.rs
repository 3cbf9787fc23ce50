//! Arousal and valence encoders: features → bidirectional LSTM → Gaussian heads.

use crate::config::ModelConfig;
use crate::error::{check_dim, Result};
use crate::latent::GaussianLatent;
use crate::nn::{BiLstm, Conv2d, Linear, ParamStore, SparseGrid};
use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
struct Heads {
    mean: Linear,
    log_variance: Linear,
}

impl Heads {
    fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, latent: usize) -> Result<Self> {
        Ok(Self {
            mean: Linear::new(ps, rng, &format!("{name}.mean"), input, latent)?,
            log_variance: Linear::new(ps, rng, &format!("{name}.log_variance"), input, latent)?,
        })
    }

    fn forward(&self, h: &Tensor) -> Result<GaussianLatent> {
        Ok(GaussianLatent { mean: self.mean.forward(h)?, log_variance: self.log_variance.forward(h)? })
    }
}

/// Conv (4,12) with "same" padding → ReLU → max-pool (1,4) → BiLSTM over time.
/// The convolution visits only the nonzero cells of the (very sparse) feature grid.
#[derive(Clone)]
pub struct ArousalEncoder {
    conv: Conv2d,
    rnn: BiLstm,
    heads: Heads,
    cfg: ModelConfig,
}

impl ArousalEncoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, rng, "enc_a.conv", cfg.arousal_channels, cfg.conv_channels, cfg.conv_kernel)?,
            rnn: BiLstm::new(ps, rng, "enc_a.rnn", cfg.arousal_features(), cfg.encoder_hidden)?,
            heads: Heads::new(ps, rng, "enc_a", 2 * cfg.encoder_hidden, cfg.latent)?,
            cfg: cfg.clone(),
        })
    }

    /// `grid: [B, channels, steps, pitches]`.
    pub fn forward(&self, grid: &Tensor) -> Result<GaussianLatent> {
        self.forward_sparse(&SparseGrid::from_tensor(grid)?)
    }

    pub fn forward_sparse(&self, grid: &SparseGrid) -> Result<GaussianLatent> {
        check_dim("arousal grid", "channel", self.cfg.arousal_channels, grid.channels)?;
        check_dim("arousal grid", "time", self.cfg.segment_steps, grid.steps)?;
        check_dim("arousal grid", "pitch", self.cfg.pitches, grid.pitches)?;
        let (b, t, p) = (grid.batch, grid.steps, grid.pitches);
        let (kt, kp) = self.cfg.conv_kernel;
        let pad = |k: usize| ((k - 1) / 2, k - 1 - (k - 1) / 2);
        // [B, T, P, C] → pool over pitch groups → [B, T, P/pp · C]
        let x = self.conv.forward_sparse(grid, pad(kt), pad(kp))?.relu()?;
        let c = self.cfg.conv_channels;
        let pp = self.cfg.pool.1;
        let x = x.reshape((b, t, p / pp, pp, c))?.max(3)?;
        let feat = x.reshape((b, t, self.cfg.arousal_features()))?;
        self.heads.forward(&self.rnn.summarize(&feat)?)
    }
}

/// Linear 12 → 32 embedding → BiLSTM over the 8 beat columns.
#[derive(Clone)]
pub struct ValenceEncoder {
    embed: Linear,
    rnn: BiLstm,
    heads: Heads,
    cfg: ModelConfig,
}

impl ValenceEncoder {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            embed: Linear::new(ps, rng, "enc_v.embed", 12, cfg.valence_embed)?,
            rnn: BiLstm::new(ps, rng, "enc_v.rnn", cfg.valence_embed, cfg.encoder_hidden)?,
            heads: Heads::new(ps, rng, "enc_v", 2 * cfg.encoder_hidden, cfg.latent)?,
            cfg: cfg.clone(),
        })
    }

    /// `v: [B, 8, 12]`.
    pub fn forward(&self, v: &Tensor) -> Result<GaussianLatent> {
        let (_, t, c) = v.dims3()?;
        check_dim("valence window", "time", self.cfg.valence_steps, t)?;
        check_dim("valence window", "chroma", 12, c)?;
        let x = self.embed.forward_nd(v)?.tanh()?;
        self.heads.forward(&self.rnn.summarize(&x)?)
    }
}
