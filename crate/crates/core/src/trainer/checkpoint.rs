//! Checkpoint files.
//!
//! Layout: magic `HNCK`, format version (u32), then three length-prefixed
//! (u64) sections: JSON metadata, the current parameter bundle, and the
//! best-validation parameter bundle (empty when there is none).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainLog, Trainer};
use crate::error::{Error, Result};
use crate::models::{decode_params, encode_params, Model, ModelSpec};
use crate::numcore::{Optimizer, OptimizerState};

const MAGIC: &[u8; 4] = b"HNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    config: TrainConfig,
    weights: Vec<Vec<f64>>,
    optimizer: OptimizerState,
    next_epoch: usize,
    best_loss: Option<f64>,
    since_best: usize,
    finished: bool,
    log: TrainLog,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: ModelSpec,
    trainer: Option<TrainerMeta>,
}

fn section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn encode(meta: &Meta, model: &Model, best: Option<&crate::numcore::ParamStore>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    section(&mut out, serde_json::to_string(meta).expect("metadata serializes").as_bytes());
    section(&mut out, &encode_params(model.params()));
    section(&mut out, &best.map(encode_params).unwrap_or_default());
    out
}

struct Decoded {
    meta: Meta,
    params: crate::numcore::ParamStore,
    best: Option<crate::numcore::ParamStore>,
}

fn decode(bytes: &[u8]) -> std::result::Result<Decoded, String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let mut pos = 8;
    let mut next = || -> std::result::Result<&[u8], String> {
        if bytes.len() - pos < 8 {
            return Err(format!("truncated at byte {pos}"));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        pos += 8;
        if ((bytes.len() - pos) as u64) < len {
            return Err(format!("truncated: section of {len} bytes at byte {pos}"));
        }
        let s = &bytes[pos..pos + len as usize];
        pos += len as usize;
        Ok(s)
    };
    let meta: Meta = serde_json::from_slice(next()?).map_err(|e| format!("metadata: {e}"))?;
    let params = decode_params(next()?)?;
    let best_bytes = next()?;
    let best = if best_bytes.is_empty() { None } else { Some(decode_params(best_bytes)?) };
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok(Decoded { meta, params, best })
}

fn read(path: &Path) -> Result<Decoded> {
    let load_err = |detail: String| Error::Load {
        path: path.to_path_buf(),
        detail,
    };
    let bytes = fs::read(path).map_err(|e| load_err(e.to_string()))?;
    decode(&bytes).map_err(load_err)
}

fn rebuild(path: &Path, spec: &ModelSpec, params: crate::numcore::ParamStore) -> Result<Model> {
    let mut model = Model::build(spec, 0).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    model.load_params(params).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(model)
}

/// Writes the model (spec and parameters) alone.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let meta = Meta {
        spec: model.spec().clone(),
        trainer: None,
    };
    fs::write(path, encode(&meta, model, None))?;
    Ok(())
}

/// Loads the model stored in any checkpoint. For a training checkpoint these
/// are the current (not best-validation) parameters.
pub fn load_model(path: &Path) -> Result<Model> {
    let d = read(path)?;
    rebuild(path, &d.meta.spec, d.params)
}

/// Writes the complete training state, including optimizer moments.
pub fn save_trainer(trainer: &Trainer, path: &Path) -> Result<()> {
    let meta = Meta {
        spec: trainer.model.spec().clone(),
        trainer: Some(TrainerMeta {
            config: trainer.config.clone(),
            weights: trainer.weights.clone(),
            optimizer: trainer.optimizer.state().clone(),
            next_epoch: trainer.next_epoch,
            best_loss: trainer.best_loss,
            since_best: trainer.since_best,
            finished: trainer.finished,
            log: trainer.log.clone(),
        }),
    };
    fs::write(path, encode(&meta, &trainer.model, trainer.best_params.as_ref()))?;
    Ok(())
}

pub fn restore_trainer(path: &Path) -> Result<Trainer> {
    let d = read(path)?;
    let Some(t) = d.meta.trainer else {
        return Err(Error::Load {
            path: path.to_path_buf(),
            detail: "checkpoint holds a model only, not training state".into(),
        });
    };
    let model = rebuild(path, &d.meta.spec, d.params)?;
    let optimizer = Optimizer::with_state(t.config.optimizer, t.optimizer, model.params()).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(Trainer {
        model,
        config: t.config,
        weights: t.weights,
        optimizer,
        next_epoch: t.next_epoch,
        best_loss: t.best_loss,
        best_params: d.best,
        since_best: t.since_best,
        finished: t.finished,
        log: t.log,
    })
}
