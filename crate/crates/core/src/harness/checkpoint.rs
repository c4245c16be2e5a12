//! Model checkpoints: parameters plus the configuration needed to rebuild
//! the network.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::{read_checkpoint, write_checkpoint, ParamStore};
use crate::config::{ModelConfig, Variant};
use crate::data::NormMode;
use crate::model::CompletionNet;

/// JSON metadata stored in front of the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub variant: Variant,
    pub norm_mode: NormMode,
    pub seed: u64,
    /// Epochs completed when the parameters were saved; 0 is the initialization.
    pub epoch: usize,
    pub config_hash: String,
    pub train_loss: Option<f64>,
    /// Mean validation `CD(PC, PGT) x 1000`.
    pub val_cd: Option<f64>,
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamStore<f32>) -> Result<(), HarnessError> {
    let json = serde_json::to_string(meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &json, params)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub meta: CheckpointMeta,
    pub net: CompletionNet,
    pub params: ParamStore<f32>,
}

/// Reads a checkpoint and checks every tensor against the layout of the
/// network its metadata describes.
pub fn load_checkpoint(path: &Path) -> Result<LoadedModel, HarnessError> {
    let mut r = BufReader::new(File::open(path)?);
    let (json, tensors) = read_checkpoint(&mut r)?;
    let meta: CheckpointMeta = serde_json::from_str(&json)?;
    if meta.model.variant() != meta.variant {
        return Err(HarnessError::ConfigMismatch(format!(
            "checkpoint says variant {} but its model switches describe {}",
            meta.variant,
            meta.model.variant()
        )));
    }
    let net = CompletionNet::new(meta.model.clone())?;
    let mut params = net.init_seeded(0);
    if tensors.len() != params.len() {
        return Err(HarnessError::ConfigMismatch(format!(
            "checkpoint holds {} tensors, the model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let slot = params
            .get_mut(&name)
            .map_err(|_| HarnessError::ConfigMismatch(format!("unexpected tensor {name}")))?;
        if slot.tensor.shape() != t.shape() {
            return Err(HarnessError::ConfigMismatch(format!(
                "{name}: checkpoint {:?}, model {:?}",
                t.shape(),
                slot.tensor.shape()
            )));
        }
        slot.tensor = t;
    }
    Ok(LoadedModel { meta, net, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binio::FormatError;

    fn meta(model: ModelConfig) -> CheckpointMeta {
        CheckpointMeta {
            variant: model.variant(),
            model,
            norm_mode: NormMode::Ours,
            seed: 3,
            epoch: 0,
            config_hash: "abc".into(),
            train_loss: None,
            val_cd: Some(1.5),
        }
    }

    #[test]
    fn round_trip_restores_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = CompletionNet::new(ModelConfig::toy()).unwrap();
        let params = net.init_seeded(9);
        save_checkpoint(&path, &meta(ModelConfig::toy()), &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta, meta(ModelConfig::toy()));
        for ((a, pa), (b, pb)) in params.iter().zip(loaded.params.iter()) {
            assert_eq!(a, b);
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = CompletionNet::new(ModelConfig::toy()).unwrap();
        let params = net.init_seeded(9);
        let other = ModelConfig {
            d_model: 16,
            ..ModelConfig::toy()
        };
        save_checkpoint(&path, &meta(other), &params).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(HarnessError::ConfigMismatch(_))));
    }

    #[test]
    fn garbage_file_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, HarnessError::Format(FormatError::BadMagic(_))));
        assert_eq!(err.class(), "BadMagic");
    }
}
