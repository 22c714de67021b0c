//! Training checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PSGMAE01"
//! u32 length, TOML training configuration
//! u64 completed epochs
//! u128 shuffle stream word position, u128 mask stream word position
//! u8 has best validation loss, f64 best validation loss
//! u64 epochs since best
//! u64 Adam step count
//! u32 parameter count
//! per parameter: u32 name length, name, u32 rank, u32 dims...,
//!                f32 values, f32 Adam first moment, f32 Adam second moment
//! ```

use std::path::Path;

use psgmae_core::mae::{MaeModel, MaeParams};
use psgmae_core::numcore::{AdamState, Tensor};
use psgmae_core::trainer::{RngState, TrainConfig, TrainState};

use crate::config::{config_from_toml, config_to_toml};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSGMAE01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint does not match its configuration: {0}")]
    ShapeMismatchOnLoad(String),
    #[error("checkpoint configuration is invalid: {0}")]
    BadConfig(String),
    #[error("refusing to save a state containing NaN or infinity")]
    NonFinite,
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn save_checkpoint(
    config: &TrainConfig,
    state: &TrainState,
) -> Result<Vec<u8>, CheckpointError> {
    if !state.all_finite() || state.best_val_loss.is_some_and(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite);
    }
    if state.model.config != config.mae {
        return Err(CheckpointError::BadConfig(
            "state was built for a different model configuration".into(),
        ));
    }
    let toml = config_to_toml(config).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_bytes(&mut out, toml.as_bytes());
    out.extend((state.epoch as u64).to_le_bytes());
    out.extend(state.rng.shuffle_word_pos.to_le_bytes());
    out.extend(state.rng.mask_word_pos.to_le_bytes());
    out.push(state.best_val_loss.is_some() as u8);
    out.extend(state.best_val_loss.unwrap_or(0.0).to_le_bytes());
    out.extend((state.epochs_since_best as u64).to_le_bytes());
    out.extend(state.adam.step.to_le_bytes());

    let layout = MaeParams::layout(&config.mae);
    out.extend((layout.len() as u32).to_le_bytes());
    for (i, (slot, tensor)) in layout.iter().zip(state.model.params.iter()).enumerate() {
        put_bytes(&mut out, slot.name.as_bytes());
        out.extend((tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for blob in [
            tensor.data(),
            &state.adam.first_moment[i],
            &state.adam.second_moment[i],
        ] {
            for v in blob {
                out.extend(v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend((bytes.len() as u32).to_le_bytes());
    out.extend(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            // A blob cut short can never match the shape it declares.
            None => Err(CheckpointError::ShapeMismatchOnLoad(format!(
                "stream ends at byte {} while {n} more bytes were expected at {}",
                self.bytes.len(),
                self.pos
            ))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|w| f32::from_le_bytes(w.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(TrainConfig, TrainState), CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 8 };
    let n = r.u32()? as usize;
    let toml =
        std::str::from_utf8(r.take(n)?).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let config = config_from_toml(toml).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    config
        .mae
        .validate()
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let epoch = r.u64()? as usize;
    let shuffle_word_pos = u128::from_le_bytes(r.array()?);
    let mask_word_pos = u128::from_le_bytes(r.array()?);
    let has_best = r.array::<1>()?[0] != 0;
    let best = f64::from_le_bytes(r.array()?);
    let epochs_since_best = r.u64()? as usize;
    let step = r.u64()?;

    let layout = MaeParams::layout(&config.mae);
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(CheckpointError::ShapeMismatchOnLoad(format!(
            "{count} parameters stored, configuration has {}",
            layout.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut first_moment = Vec::with_capacity(count);
    let mut second_moment = Vec::with_capacity(count);
    for slot in layout.iter() {
        let n = r.u32()? as usize;
        let name = r.take(n)?;
        if name != slot.name.as_bytes() {
            return Err(CheckpointError::ShapeMismatchOnLoad(format!(
                "expected parameter `{}`, found `{}`",
                slot.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32()? as usize;
        if rank != slot.shape.len() {
            return Err(CheckpointError::ShapeMismatchOnLoad(format!(
                "`{}` has rank {rank}",
                slot.name
            )));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape != slot.shape {
            return Err(CheckpointError::ShapeMismatchOnLoad(format!(
                "`{}` has shape {shape:?}, expected {:?}",
                slot.name, slot.shape
            )));
        }
        let len: usize = shape.iter().product();
        let values = r.f32s(len)?;
        tensors.push(Tensor::new(&shape, values).expect("length matches shape"));
        first_moment.push(r.f32s(len)?);
        second_moment.push(r.f32s(len)?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::ShapeMismatchOnLoad(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }

    let params = MaeParams::from_vec(&layout, tensors).expect("count checked");
    let model = MaeModel::from_params(config.mae.clone(), params)
        .map_err(|e| CheckpointError::ShapeMismatchOnLoad(e.to_string()))?;
    let state = TrainState {
        model,
        adam: AdamState {
            config: config.optimizer,
            step,
            first_moment,
            second_moment,
        },
        epoch,
        rng: RngState {
            shuffle_word_pos,
            mask_word_pos,
        },
        best_val_loss: has_best.then_some(best),
        epochs_since_best,
    };
    Ok((config, state))
}

pub fn write_checkpoint(
    path: &Path,
    config: &TrainConfig,
    state: &TrainState,
) -> Result<(), CheckpointError> {
    let bytes = save_checkpoint(config, state)?;
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<(TrainConfig, TrainState), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_checkpoint(&bytes)
}
