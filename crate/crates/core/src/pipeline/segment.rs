use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    map_stage_label, normalize_epoch, reject_artifact, resample_linear, ArtifactThresholds,
    ChannelEpoch, ChannelKind, EpochRecord, PipelineError, SleepStage, EPOCH_SAMPLES,
    EPOCH_SECONDS, TARGET_RATE_HZ,
};
use crate::recording::{Annotation, EdfRecording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentOptions {
    pub artifacts: ArtifactThresholds,
    /// Wake epochs kept before the first and after the last sleep epoch.
    pub wake_margin_epochs: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        // 30 minutes of wake on either side of sleep.
        Self {
            artifacts: ArtifactThresholds::default(),
            wake_margin_epochs: 60,
        }
    }
}

/// Per-epoch stage labels for `num_epochs` consecutive 30-s windows.
///
/// An annotation covers every epoch whose start lies in
/// `[onset, onset + duration)`. Only stage-like labels (`Sleep stage *`,
/// `Movement time`) take part; later annotations override earlier ones.
/// Unscored and excluded epochs are `None`.
pub fn stage_timeline(annotations: &[Annotation], num_epochs: usize) -> Vec<Option<SleepStage>> {
    let mut stages = vec![None; num_epochs];
    for a in annotations {
        let label = a.label.trim();
        if !(label.starts_with("Sleep stage") || label == "Movement time") {
            continue;
        }
        let first = libm::ceil(a.onset_s / EPOCH_SECONDS - 1e-9).max(0.0) as usize;
        let end = libm::ceil((a.onset_s + a.duration_s) / EPOCH_SECONDS - 1e-9).max(0.0) as usize;
        let stage = map_stage_label(label);
        for slot in stages.iter_mut().take(end).skip(first) {
            *slot = stage;
        }
    }
    stages
}

/// Cuts a recording into labeled, artifact-free, normalized epochs.
///
/// Every involved channel is resampled to 100 Hz first. Wake runs are
/// trimmed to `wake_margin_epochs` around the sleep period. An epoch is
/// dropped if any involved channel fails [`reject_artifact`].
pub fn segment_epochs(
    subject_id: &str,
    recording: &EdfRecording,
    annotations: &[Annotation],
    input_channel: &str,
    target_channels: &[String],
    options: &SegmentOptions,
) -> Result<Vec<EpochRecord>, PipelineError> {
    if let Some(t) = target_channels
        .iter()
        .find(|t| t.trim().eq_ignore_ascii_case(input_channel.trim()))
    {
        return Err(PipelineError::SelfReconstruction(t.clone()));
    }

    let mut channels: Vec<(String, Vec<f32>, f64)> = Vec::with_capacity(1 + target_channels.len());
    for name in core::iter::once(input_channel).chain(target_channels.iter().map(String::as_str)) {
        let idx = recording
            .signal_index(name)
            .ok_or_else(|| PipelineError::MissingChannel(name.to_string()))?;
        let spec = &recording.signals[idx];
        let rate = spec.sample_rate(recording.record_duration_s);
        let grid = resample_linear(&recording.samples[idx], rate, TARGET_RATE_HZ)?;
        let to_uv = microvolt_scale(&spec.physical_dimension);
        channels.push((spec.label.trim().to_string(), grid, to_uv));
    }

    let num_epochs = channels
        .iter()
        .map(|(_, s, _)| s.len() / EPOCH_SAMPLES)
        .min()
        .unwrap_or(0);
    let mut stages = stage_timeline(annotations, num_epochs);
    if stages.iter().all(Option::is_none) {
        return Err(PipelineError::NoLabeledEpochs);
    }
    trim_wake(&mut stages, options.wake_margin_epochs);

    let mut out = Vec::new();
    'epochs: for (k, stage) in stages.iter().enumerate() {
        let Some(stage) = *stage else { continue };
        let range = k * EPOCH_SAMPLES..(k + 1) * EPOCH_SAMPLES;
        let mut normalized = Vec::with_capacity(channels.len());
        for (name, grid, to_uv) in &channels {
            let window = &grid[range.clone()];
            let kind = ChannelKind::from_label(name);
            let rejected = if *to_uv == 1.0 {
                reject_artifact(window, kind, &options.artifacts)
            } else {
                let uv: Vec<f32> = window.iter().map(|&v| (v as f64 * to_uv) as f32).collect();
                reject_artifact(&uv, kind, &options.artifacts)
            };
            if rejected {
                continue 'epochs;
            }
            let (samples, norm) = normalize_epoch(window);
            normalized.push(ChannelEpoch {
                name: name.clone(),
                samples,
                norm,
            });
        }
        let input = normalized.remove(0);
        out.push(EpochRecord {
            subject_id: subject_id.to_string(),
            epoch_index: k,
            stage,
            input,
            targets: normalized,
        });
    }
    Ok(out)
}

/// Drops wake epochs further than `margin` epochs from the sleep period.
/// Recordings with no sleep at all are left untouched.
fn trim_wake(stages: &mut [Option<SleepStage>], margin: usize) {
    let is_sleep = |s: &Option<SleepStage>| matches!(s, Some(st) if *st != SleepStage::Wake);
    let (Some(first), Some(last)) = (
        stages.iter().position(is_sleep),
        stages.iter().rposition(is_sleep),
    ) else {
        return;
    };
    let keep_from = first.saturating_sub(margin);
    let keep_to = last.saturating_add(margin);
    for (k, s) in stages.iter_mut().enumerate() {
        if k < keep_from || k > keep_to {
            *s = None;
        }
    }
}

/// Factor converting a physical dimension to microvolts (unknown units are
/// taken as µV).
fn microvolt_scale(dimension: &str) -> f64 {
    match dimension.trim() {
        "V" => 1e6,
        "mV" => 1e3,
        "nV" => 1e-3,
        _ => 1.0,
    }
}
