//! Checkpoints: `manifest.json` (config, shapes, version) beside `weights.safetensors`.

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::vae::VaVae;
use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_version: String,
    pub config: ModelConfig,
    pub dtype: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub shapes: BTreeMap<String, Vec<usize>>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(ModelError::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn dtype_of(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(ModelError::Checkpoint(format!("unsupported dtype {other}"))),
    }
}

pub fn save_checkpoint(model: &VaVae, dir: &Path, seed: u64, step: u64, epoch: usize) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let tensors: std::collections::HashMap<String, _> = model.params().tensors().into_iter().collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_version: format!("emoacc-{}+s{seed}.e{epoch}.t{step}", env!("CARGO_PKG_VERSION")),
        config: model.config().clone(),
        dtype: dtype_name(model.dtype())?.to_string(),
        seed,
        step,
        epoch,
        shapes: tensors.iter().map(|(k, t)| (k.clone(), t.dims().to_vec())).collect(),
    };
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS))?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("format version {} unsupported", m.format_version)));
    }
    Ok(m)
}

pub fn load_checkpoint(dir: &Path) -> Result<(VaVae, Manifest)> {
    let m = read_manifest(dir)?;
    let model = VaVae::new(&m.config, m.seed, dtype_of(&m.dtype)?)?;
    let loaded = candle_core::safetensors::load(dir.join(WEIGHTS), &Device::Cpu)?;
    let loaded: BTreeMap<String, _> = loaded.into_iter().collect();
    for (name, shape) in &m.shapes {
        match loaded.get(name) {
            Some(t) if t.dims() == shape.as_slice() => {}
            Some(t) => {
                return Err(ModelError::Checkpoint(format!("{name}: stored {:?}, manifest {shape:?}", t.dims())))
            }
            None => return Err(ModelError::Checkpoint(format!("{name} listed in manifest but missing"))),
        }
    }
    model.params().assign(&loaded).map_err(ModelError::Checkpoint)?;
    Ok((model, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reload_is_bit_exact() {
        let cfg = ModelConfig { latent: 8, encoder_hidden: 8, time_hidden: 8, pitch_hidden: 8, ..ModelConfig::desk() };
        let m = VaVae::new(&cfg, 7, DType::F32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, dir.path(), 7, 12, 1).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.step, 12);
        assert_eq!(back.config(), &cfg);
        let (a, b) = (m.params().tensors(), back.params().tensors());
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, t) in &a {
            let x = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()), "{k}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig { latent: 8, encoder_hidden: 8, ..ModelConfig::desk() };
        let m = VaVae::new(&cfg, 1, DType::F32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, dir.path(), 1, 0, 0).unwrap();
        let mut man = read_manifest(dir.path()).unwrap();
        man.config.encoder_hidden = 9;
        std::fs::write(dir.path().join(MANIFEST), serde_json::to_string(&man).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(ModelError::Checkpoint(_))));
    }
}
