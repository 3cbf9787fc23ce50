//! Valence/arousal conditioned VAE for piano accompaniment: encoders, decoders,
//! training loop, checkpoints and the generation pipeline.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod latent;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod vae;

pub use attention::{relative_self_attention, RelativeAttention};
pub use config::{ConfigError, ModelConfig};
pub use data::{Batch, Example};
pub use error::{ModelError, Result};
pub use latent::{kl_closed_form, sample_latent, GaussianLatent};
pub use loss::{elbo_loss, LossBreakdown, LossTensors};
pub use vae::{Decoded, Forcing, Forward, VaVae};
pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use trainer::{lr_schedule, prepare_splits, teacher_forcing_gate, train, DatasetSplit, TrainingConfig};
pub use pipeline::{generate, Generation, GenerationOptions};
