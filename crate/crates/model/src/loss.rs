//! Negative ELBO: Bernoulli reconstruction terms plus closed-form KL.

use crate::data::Batch;
use crate::error::{ModelError, Result};
use crate::nn::bce_with_logits;
use crate::vae::Forward;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

/// Per-sample means over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_valence: f64,
    pub recon_arousal: f64,
    pub kl_valence: f64,
    pub kl_arousal: f64,
    pub total: f64,
}

pub struct LossTensors {
    pub recon_valence: Tensor,
    pub recon_arousal: Tensor,
    pub kl_valence: Tensor,
    pub kl_arousal: Tensor,
    /// `recon + kl_weight · kl`, the optimized objective.
    pub total: Tensor,
    pub kl_weight: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl LossTensors {
    /// Reads the components back; a non-finite component is an error naming it.
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let b = LossBreakdown {
            recon_valence: scalar(&self.recon_valence)?,
            recon_arousal: scalar(&self.recon_arousal)?,
            kl_valence: scalar(&self.kl_valence)?,
            kl_arousal: scalar(&self.kl_arousal)?,
            total: scalar(&self.total)?,
        };
        for (component, v) in [
            ("recon_valence", b.recon_valence),
            ("recon_arousal", b.recon_arousal),
            ("kl_valence", b.kl_valence),
            ("kl_arousal", b.kl_arousal),
            ("total", b.total),
        ] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite { component });
            }
        }
        Ok(b)
    }
}

pub fn elbo_loss(f: &Forward, batch: &Batch, kl_weight: f64) -> Result<LossTensors> {
    let n = batch.size as f64;
    let recon_valence = (bce_with_logits(&f.valence_logits, &batch.valence_target)?.sum_all()? / n)?;
    let onsets = bce_with_logits(&f.pianotree.onset_logits, &batch.onsets)?.sum_all()?;
    let recon_arousal = match &batch.notes.bits {
        Some(bits) if f.duration_logits.dim(0)? > 0 => {
            (onsets + bce_with_logits(&f.duration_logits, bits)?.sum_all()?)?
        }
        _ => onsets,
    };
    let recon_arousal = (recon_arousal / n)?;
    let kl_valence = (f.latent_valence.kl()?.sum_all()? / n)?;
    let kl_arousal = (f.latent_arousal.kl()?.sum_all()? / n)?;
    let kl = (&kl_valence + &kl_arousal)?;
    let total = ((&recon_valence + &recon_arousal)? + (kl * kl_weight)?)?;
    Ok(LossTensors { recon_valence, recon_arousal, kl_valence, kl_arousal, total, kl_weight })
}
