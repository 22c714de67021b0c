use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SleepStage;

/// Per-channel z-score parameters, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: f64,
    pub std: f64,
}

/// One channel's normalized samples for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEpoch {
    pub name: String,
    pub samples: Vec<f32>,
    pub norm: NormParams,
}

impl ChannelEpoch {
    /// Samples back in physical units.
    pub fn physical(&self) -> Vec<f32> {
        super::denormalize(&self.samples, self.norm)
    }
}

/// One 30-s training example: the input channel and every target channel,
/// all on the 100 Hz grid and z-scored. The input channel is never among the
/// targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub subject_id: String,
    pub epoch_index: usize,
    pub stage: SleepStage,
    pub input: ChannelEpoch,
    pub targets: Vec<ChannelEpoch>,
}

impl EpochRecord {
    pub fn target_names(&self) -> impl Iterator<Item = &str> {
        self.targets.iter().map(|t| t.name.as_str())
    }

    pub fn target(&self, name: &str) -> Option<&ChannelEpoch> {
        self.targets.iter().find(|t| t.name == name)
    }
}
