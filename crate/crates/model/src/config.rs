use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid model config: {0}")]
pub struct ConfigError(pub String);

/// Layer sizes of the VAE. [`ModelConfig::full`] gives the published sizes;
/// [`ModelConfig::desk`] shrinks every hidden width for CPU experiments while
/// keeping the interfaces (latent 256, decoder input 292, windows 32/8) intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent: usize,
    /// Feature channels of the arousal grid.
    pub arousal_channels: usize,
    pub conv_channels: usize,
    pub conv_kernel: (usize, usize),
    pub pool: (usize, usize),
    /// Per direction; the bidirectional output is twice this.
    pub encoder_hidden: usize,
    pub valence_embed: usize,
    /// Conditioning context appended to the latent at the valence decoder input.
    pub valence_context: usize,
    pub valence_decoder_hidden: usize,
    pub time_hidden: usize,
    pub summary: usize,
    pub attention_dim: usize,
    pub token_embed: usize,
    pub pitch_hidden: usize,
    pub pitch_layers: usize,
    pub duration_hidden: usize,
    pub duration_bits: usize,
    pub segment_steps: usize,
    pub valence_steps: usize,
    pub pitches: usize,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            latent: 256,
            arousal_channels: emoacc_core::emotion::FEATURE_CHANNELS,
            conv_channels: 8,
            conv_kernel: (4, 12),
            pool: (1, 4),
            encoder_hidden: 512,
            valence_embed: 32,
            valence_context: 36,
            valence_decoder_hidden: 512,
            time_hidden: 1024,
            summary: 512,
            attention_dim: 128,
            token_embed: 128,
            pitch_hidden: 512,
            pitch_layers: 2,
            duration_hidden: 16,
            duration_bits: 4,
            segment_steps: 32,
            valence_steps: 8,
            pitches: 128,
        }
    }

    pub fn desk() -> Self {
        Self {
            conv_channels: 4,
            encoder_hidden: 64,
            valence_decoder_hidden: 64,
            time_hidden: 128,
            summary: 64,
            attention_dim: 32,
            token_embed: 32,
            pitch_hidden: 128,
            ..Self::full()
        }
    }

    /// Width of the recurrent input after conv and pooling.
    pub fn arousal_features(&self) -> usize {
        self.conv_channels * self.pitches / self.pool.1
    }

    pub fn valence_decoder_input(&self) -> usize {
        self.latent + self.valence_context
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            self.latent,
            self.arousal_channels,
            self.conv_channels,
            self.conv_kernel.0,
            self.conv_kernel.1,
            self.pool.0,
            self.pool.1,
            self.encoder_hidden,
            self.valence_embed,
            self.valence_decoder_hidden,
            self.time_hidden,
            self.summary,
            self.attention_dim,
            self.token_embed,
            self.pitch_hidden,
            self.pitch_layers,
            self.duration_hidden,
            self.duration_bits,
            self.segment_steps,
            self.valence_steps,
            self.pitches,
        ];
        if dims.contains(&0) {
            return Err(ConfigError("all dimensions must be positive".into()));
        }
        if self.pool.0 != 1 || self.pitches % self.pool.1 != 0 {
            return Err(ConfigError("pooling must keep time and divide the pitch axis".into()));
        }
        if self.valence_context != 36 {
            return Err(ConfigError("valence context is previous chroma + two melody pitch-class frames (36)".into()));
        }
        if (1usize << self.duration_bits) < 16 {
            return Err(ConfigError("duration bits must cover 16 steps".into()));
        }
        if self.segment_steps % self.valence_steps != 0 {
            return Err(ConfigError("valence window must divide the segment".into()));
        }
        Ok(())
    }
}
