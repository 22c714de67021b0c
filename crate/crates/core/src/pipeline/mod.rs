//! Recordings + hypnograms → normalized, labeled 30-s training epochs.

mod artifact;
mod epoch;
mod manifest;
mod normalize;
mod resample;
mod segment;
mod stage;

use alloc::string::String;

pub use artifact::{reject_artifact, ArtifactThresholds, ChannelKind};
pub use epoch::{ChannelEpoch, EpochRecord, NormParams};
pub use manifest::{
    split_subjects, DatasetManifest, Split, SplitFractions, StageCounts, SubjectEntry,
};
pub use normalize::{denormalize, normalize_epoch};
pub use resample::resample_linear;
pub use segment::{segment_epochs, stage_timeline, SegmentOptions};
pub use stage::{map_stage_label, SleepStage};

/// Scoring window length.
pub const EPOCH_SECONDS: f64 = 30.0;
/// Common sampling grid every channel is resampled onto.
pub const TARGET_RATE_HZ: f64 = 100.0;
/// Samples per epoch on the common grid.
pub const EPOCH_SAMPLES: usize = 3000;
/// Lower bound applied to per-epoch standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("empty input signal")]
    EmptyInput,
    #[error("invalid sampling rate {0} Hz")]
    InvalidRate(f64),
    #[error("channel `{0}` not found in recording")]
    MissingChannel(String),
    #[error("input channel `{0}` cannot also be a reconstruction target")]
    SelfReconstruction(String),
    #[error("no epochs carry a usable sleep-stage label")]
    NoLabeledEpochs,
    #[error("need at least 3 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
}
