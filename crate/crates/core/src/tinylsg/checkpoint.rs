//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so `load(save(m)) == m` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, TinyModel};
use super::vocab::Vocab;
use super::{LsgConfig, LsgError};
use crate::num::Real;

pub const CHECKPOINT_FORMAT: &str = "sectionsum-tinylsg";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub config: ModelConfig,
    /// Attention pattern the model was trained with.
    pub lsg: LsgConfig,
    pub vocab: Vocab,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &TinyModel<T>, lsg: &LsgConfig) -> Result<Self, LsgError> {
        let mut tensors = Vec::new();
        for (name, m) in model.params.named() {
            let data: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(LsgError::Checkpoint(format!("tensor {name} holds a non-finite value")));
            }
            tensors.push(TensorRecord {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data,
            });
        }
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: T::TAG.into(),
            config: model.config.clone(),
            lsg: lsg.clone(),
            vocab: model.vocab.clone(),
            tensors,
        })
    }

    pub fn into_model<T: Real>(self) -> Result<(TinyModel<T>, LsgConfig), LsgError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(LsgError::Checkpoint(format!("unexpected format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(LsgError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.scalar != T::TAG {
            return Err(LsgError::Checkpoint(format!(
                "checkpoint holds {} values, expected {}",
                self.scalar,
                T::TAG
            )));
        }
        let mut model = TinyModel::<T>::new(self.config, self.vocab, 0)?;
        let mut slots = model.params.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(LsgError::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                self.tensors.len()
            )));
        }
        for (slot, rec) in slots.iter_mut().zip(&self.tensors) {
            if slot.shape() != (rec.rows, rec.cols) || rec.data.len() != rec.rows * rec.cols {
                return Err(LsgError::Checkpoint(format!("tensor {} has the wrong shape", rec.name)));
            }
            for (dst, &src) in slot.data_mut().iter_mut().zip(&rec.data) {
                *dst = T::from_f64_lossy(src);
            }
        }
        Ok((model, self.lsg))
    }
}

pub fn save_checkpoint<T: Real>(model: &TinyModel<T>, lsg: &LsgConfig, path: &Path) -> Result<(), LsgError> {
    let ckpt = Checkpoint::from_model(model, lsg)?;
    let text = serde_json::to_string(&ckpt).map_err(|e| LsgError::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(TinyModel<T>, LsgConfig), LsgError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| LsgError::Checkpoint(e.to_string()))?;
    ckpt.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylsg::vocab::build_vocab;

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = build_vocab(&["one two three four"], 1).unwrap();
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 6,
        };
        let model: TinyModel<f64> = TinyModel::new(cfg.clone(), vocab.clone(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let lsg = LsgConfig::default();
        save_checkpoint(&model, &lsg, &path).unwrap();
        let (back, lsg_back) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(lsg_back, lsg);
        assert!(matches!(load_checkpoint::<f32>(&path), Err(LsgError::Checkpoint(_))));

        let small: TinyModel<f32> = TinyModel::new(cfg, vocab, 9).unwrap();
        save_checkpoint(&small, &lsg, &path).unwrap();
        assert_eq!(load_checkpoint::<f32>(&path).unwrap().0, small);
    }
}
