use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MaeError;

/// Which token positions contribute to the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScope {
    #[default]
    All,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaeConfig {
    pub patch_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub mlp_ratio: usize,
    pub mask_ratio: f64,
    pub loss_scope: LossScope,
    pub target_channels: Vec<String>,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            patch_size: 100,
            seq_len: 30,
            embed_dim: 64,
            num_heads: 4,
            encoder_layers: 2,
            decoder_layers: 1,
            mlp_ratio: 4,
            mask_ratio: 0.5,
            loss_scope: LossScope::All,
            target_channels: Vec::new(),
        }
    }
}

impl MaeConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny(target_channels: Vec<String>) -> Self {
        Self {
            patch_size: 10,
            seq_len: 4,
            embed_dim: 8,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            mlp_ratio: 4,
            mask_ratio: 0.5,
            loss_scope: LossScope::All,
            target_channels,
        }
    }

    pub fn epoch_len(&self) -> usize {
        self.patch_size * self.seq_len
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn num_targets(&self) -> usize {
        self.target_channels.len()
    }

    /// Number of masked tokens, `round(mask_ratio * seq_len)`.
    pub fn masked_count(&self) -> usize {
        masked_count(self.seq_len, self.mask_ratio)
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        let bad = |m: String| Err(MaeError::InvalidConfig(m));
        if self.patch_size == 0 || self.seq_len == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return bad(format!("zero-sized dimension in {:?}", self));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        if self.masked_count() >= self.seq_len {
            return bad(format!(
                "mask_ratio {} masks all {} tokens",
                self.mask_ratio, self.seq_len
            ));
        }
        if self.target_channels.is_empty() {
            return bad("no target channels".into());
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the requirement that one epoch is
    /// exactly `epoch_samples` long.
    pub fn validate_for_epochs(&self, epoch_samples: usize) -> Result<(), MaeError> {
        self.validate()?;
        if self.epoch_len() != epoch_samples {
            return Err(MaeError::InvalidConfig(format!(
                "patch_size {} x seq_len {} != {} samples per epoch",
                self.patch_size, self.seq_len, epoch_samples
            )));
        }
        Ok(())
    }
}

pub(crate) fn masked_count(seq_len: usize, mask_ratio: f64) -> usize {
    libm::round(mask_ratio * seq_len as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_config_fits_an_epoch() {
        let mut c = MaeConfig::default();
        c.target_channels = vec!["EOG".into()];
        c.validate_for_epochs(3000).unwrap();
        assert_eq!(c.head_dim(), 16);
    }

    #[test]
    fn invariants_enforced() {
        let mut c = MaeConfig::tiny(vec!["a".into()]);
        c.validate().unwrap();
        assert!(c.validate_for_epochs(3000).is_err());
        c.num_heads = 3;
        assert!(c.validate().is_err());
        c.num_heads = 2;
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());
        c.mask_ratio = 0.9; // rounds to all 4 tokens
        assert!(c.validate().is_err());
        c.mask_ratio = 0.0;
        c.target_channels.clear();
        assert!(c.validate().is_err());
    }
}
