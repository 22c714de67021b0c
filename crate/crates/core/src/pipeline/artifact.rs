use serde::{Deserialize, Serialize};

/// Broad signal family, inferred from a channel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Eeg,
    Eog,
    Emg,
    Other,
}

impl ChannelKind {
    pub fn from_label(label: &str) -> Self {
        let upper = label.to_ascii_uppercase();
        if upper.contains("EOG") {
            ChannelKind::Eog
        } else if upper.contains("EMG") {
            ChannelKind::Emg
        } else if upper.contains("EEG") {
            ChannelKind::Eeg
        } else {
            ChannelKind::Other
        }
    }
}

/// Amplitude limits in microvolts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactThresholds {
    pub eeg_peak_to_peak: f64,
    pub eog_peak_to_peak: f64,
    pub emg_peak_to_peak: f64,
    pub other_peak_to_peak: f64,
    /// Epochs whose standard deviation falls below this are flatlines.
    pub flatline_std: f64,
}

impl Default for ArtifactThresholds {
    fn default() -> Self {
        Self {
            eeg_peak_to_peak: 500.0,
            eog_peak_to_peak: 500.0,
            emg_peak_to_peak: 500.0,
            other_peak_to_peak: 500.0,
            flatline_std: 0.1,
        }
    }
}

impl ArtifactThresholds {
    pub fn peak_to_peak(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::Eeg => self.eeg_peak_to_peak,
            ChannelKind::Eog => self.eog_peak_to_peak,
            ChannelKind::Emg => self.emg_peak_to_peak,
            ChannelKind::Other => self.other_peak_to_peak,
        }
    }
}

/// True when the epoch (physical units, µV) should be dropped: its
/// peak-to-peak amplitude exceeds the channel limit or it is flat.
pub fn reject_artifact(
    samples: &[f32],
    kind: ChannelKind,
    thresholds: &ArtifactThresholds,
) -> bool {
    if samples.is_empty() {
        return true;
    }
    let (lo, hi) = samples
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(lo.is_finite() && hi.is_finite()) {
        return true;
    }
    if (hi - lo) as f64 > thresholds.peak_to_peak(kind) {
        return true;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    libm::sqrt(var) < thresholds.flatline_std
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn sine(amp: f32) -> Vec<f32> {
        (0..3000)
            .map(|i| amp * libm::sinf(i as f32 * 0.1))
            .collect()
    }

    #[test]
    fn flatline_is_rejected() {
        assert!(reject_artifact(
            &[0.0; 3000],
            ChannelKind::Eeg,
            &ArtifactThresholds::default()
        ));
    }

    #[test]
    fn moderate_sine_is_kept() {
        assert!(!reject_artifact(
            &sine(50.0),
            ChannelKind::Eeg,
            &ArtifactThresholds::default()
        ));
    }

    #[test]
    fn spike_is_rejected() {
        let mut x = sine(50.0);
        x[1234] = 600.0;
        assert!(reject_artifact(
            &x,
            ChannelKind::Eog,
            &ArtifactThresholds::default()
        ));
    }

    #[test]
    fn kind_from_sleep_edf_labels() {
        assert_eq!(ChannelKind::from_label("EEG Fpz-Cz"), ChannelKind::Eeg);
        assert_eq!(ChannelKind::from_label("EOG horizontal"), ChannelKind::Eog);
        assert_eq!(ChannelKind::from_label("EMG submental"), ChannelKind::Emg);
        assert_eq!(
            ChannelKind::from_label("Resp oro-nasal"),
            ChannelKind::Other
        );
    }
}
