//! Synthetic PSG whose target channels are fixed transforms of the input
//! EEG channel, so a working model has something exact to learn.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::pipeline::{SleepStage, EPOCH_SAMPLES, EPOCH_SECONDS, TARGET_RATE_HZ};
use crate::recording::{Annotation, EdfRecording, SignalSpec, StartDateTime};

pub const INPUT_LABEL: &str = "EEG Fpz-Cz";
pub const EEG2_LABEL: &str = "EEG Pz-Oz";
pub const EOG_LABEL: &str = "EOG horizontal";
pub const EMG_LABEL: &str = "EMG submental";

/// Physical range of every generated channel, in µV.
pub const PHYSICAL_RANGE_UV: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("duration {0} s is not a positive multiple of 30 s")]
    BadDuration(f64),
    #[error("stage cycle is empty or has a zero dwell")]
    BadCycle,
    #[error("noise_std {0} must be finite and non-negative")]
    BadNoise(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    /// Selects an independent random stream of `seed`, so several subjects
    /// can be drawn from one seed.
    pub subject: u64,
    pub duration_s: f64,
    /// Stages and how many consecutive epochs each lasts, repeated until
    /// the recording ends.
    pub stage_cycle: Vec<(SleepStage, usize)>,
    /// Standard deviation of the additive Gaussian noise on the input, µV.
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            subject: 0,
            duration_s: 3600.0,
            stage_cycle: SleepStage::ALL.iter().map(|&s| (s, 2)).collect(),
            noise_std: 5.0,
        }
    }
}

impl SynthSpec {
    pub fn num_epochs(&self) -> usize {
        (self.duration_s / EPOCH_SECONDS) as usize
    }

    /// Stage of every epoch.
    pub fn stages(&self) -> Vec<SleepStage> {
        let cycle: Vec<SleepStage> = self
            .stage_cycle
            .iter()
            .flat_map(|&(s, n)| core::iter::repeat_n(s, n))
            .collect();
        (0..self.num_epochs())
            .map(|k| cycle[k % cycle.len()])
            .collect()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let epochs = self.duration_s / EPOCH_SECONDS;
        if !(self.duration_s > 0.0) || epochs != libm::floor(epochs) {
            return Err(SynthError::BadDuration(self.duration_s));
        }
        if self.stage_cycle.is_empty() || self.stage_cycle.iter().any(|&(_, n)| n == 0) {
            return Err(SynthError::BadCycle);
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(SynthError::BadNoise(self.noise_std));
        }
        Ok(())
    }
}

/// Generates the recording (four 100 Hz channels in 30-s data records) and
/// its hypnogram, one `Sleep stage *` annotation per epoch.
///
/// Stored samples are already quantized to the 16-bit grid, so writing and
/// re-reading the recording reproduces them exactly.
pub fn generate(spec: &SynthSpec) -> Result<(EdfRecording, Vec<Annotation>), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.subject);
    let stages = spec.stages();
    let n = stages.len() * EPOCH_SAMPLES;

    let noise = Normal::new(0.0, spec.noise_std).expect("validated");
    let mut x = Vec::with_capacity(n);
    for (k, &stage) in stages.iter().enumerate() {
        let phase = rng.random::<f64>() * TAU;
        for i in 0..EPOCH_SAMPLES {
            let t = (k * EPOCH_SAMPLES + i) as f64 / TARGET_RATE_HZ;
            let local = i as f64 / TARGET_RATE_HZ;
            let clean = stage_wave(stage, t, local, phase);
            let e = if spec.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            x.push(clean + e);
        }
    }

    let at = |j: isize| x[j.clamp(0, n as isize - 1) as usize];
    let mut eog = Vec::with_capacity(n);
    let mut emg = Vec::with_capacity(n);
    let mut eeg2 = Vec::with_capacity(n);
    for j in 0..n as isize {
        let t = j as f64 / TARGET_RATE_HZ;
        // 25-sample trailing mean ending two samples back, plus slow drift.
        let lagged: f64 = (0..25).map(|d| at(j - 2 - d)).sum::<f64>() / 25.0;
        eog.push(lagged + 50.0 * libm::sin(TAU * 0.2 * t));
        emg.push(libm::fabs(at(j) - at(j - 1)) * 10.0);
        let centered: f64 = (-2..=2).map(|d| at(j + d)).sum::<f64>() / 5.0;
        eeg2.push(0.7 * at(j - 5) + 0.3 * centered);
    }

    let mut signals = Vec::new();
    let mut samples = Vec::new();
    for (label, data) in [
        (INPUT_LABEL, &x),
        (EEG2_LABEL, &eeg2),
        (EOG_LABEL, &eog),
        (EMG_LABEL, &emg),
    ] {
        let spec = channel_spec(label);
        samples.push(data.iter().map(|&v| spec.quantize(v) as f32).collect());
        signals.push(spec);
    }

    let recording = EdfRecording {
        version: "0".into(),
        patient_id: format!("SYNTH-{}-{} X X X", spec.seed, spec.subject),
        recording_id: String::from("Startdate X X X synthgen"),
        start: StartDateTime {
            year: 2000,
            month: 1,
            day: 1,
            hour: 22,
            minute: 0,
            second: 0,
        },
        record_duration_s: EPOCH_SECONDS,
        num_records: stages.len(),
        signals,
        samples,
        annotation_signal: None,
        annotations: Vec::new(),
    };
    let hypnogram = stages
        .iter()
        .enumerate()
        .map(|(k, s)| Annotation::new(k as f64 * EPOCH_SECONDS, EPOCH_SECONDS, hypnogram_label(*s)))
        .collect();
    Ok((recording, hypnogram))
}

/// Sleep-EDF style label for a stage.
pub fn hypnogram_label(stage: SleepStage) -> &'static str {
    match stage {
        SleepStage::Wake => "Sleep stage W",
        SleepStage::N1 => "Sleep stage 1",
        SleepStage::N2 => "Sleep stage 2",
        SleepStage::N3 => "Sleep stage 3",
        SleepStage::Rem => "Sleep stage R",
    }
}

/// Clean input signal in µV. `t` is time since the recording started,
/// `local` time since the epoch started.
fn stage_wave(stage: SleepStage, t: f64, local: f64, phase: f64) -> f64 {
    let osc = |hz: f64, amp: f64| amp * libm::sin(TAU * hz * t + phase);
    match stage {
        SleepStage::Wake => osc(10.0, 30.0),
        SleepStage::N1 => osc(6.0, 20.0),
        SleepStage::N2 => {
            // One-second Hann-shaped 12 Hz spindle starting every 5 s.
            let in_cycle = local % 5.0;
            let spindle = if in_cycle < 1.0 {
                let w = 0.5 - 0.5 * libm::cos(TAU * in_cycle);
                40.0 * w * libm::sin(TAU * 12.0 * local)
            } else {
                0.0
            };
            osc(4.0, 40.0) + spindle
        }
        SleepStage::N3 => osc(1.0, 75.0),
        SleepStage::Rem => osc(8.0, 15.0),
    }
}

fn channel_spec(label: &str) -> SignalSpec {
    SignalSpec {
        label: label.into(),
        transducer: "synthetic".into(),
        physical_dimension: "uV".into(),
        physical_min: -PHYSICAL_RANGE_UV,
        physical_max: PHYSICAL_RANGE_UV,
        digital_min: -32768,
        digital_max: 32767,
        samples_per_record: EPOCH_SAMPLES,
        prefilter: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn spec(duration_s: f64, noise_std: f64) -> SynthSpec {
        SynthSpec {
            duration_s,
            noise_std,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn epoch_count_and_stage_labels_follow_cycle() {
        let (rec, hyp) = generate(&spec(600.0, 5.0)).unwrap();
        assert_eq!(rec.num_records, 20);
        assert_eq!(hyp.len(), 20);
        let expect = ["W", "W", "1", "1", "2", "2", "3", "3", "R", "R"];
        for (k, a) in hyp.iter().enumerate() {
            assert_eq!(a.label, format!("Sleep stage {}", expect[k % 10]));
            assert_eq!(a.onset_s, 30.0 * k as f64);
            assert_eq!(a.duration_s, 30.0);
        }
        assert_eq!(rec.signals.len(), 4);
        for s in &rec.samples {
            assert_eq!(s.len(), 20 * 3000);
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let a = generate(&spec(300.0, 5.0)).unwrap();
        let b = generate(&spec(300.0, 5.0)).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec {
            subject: 1,
            ..spec(300.0, 5.0)
        })
        .unwrap();
        assert_ne!(a.0.samples, c.0.samples);
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(
            generate(&spec(45.0, 1.0)).unwrap_err(),
            SynthError::BadDuration(45.0)
        );
        assert_eq!(
            generate(&spec(0.0, 1.0)).unwrap_err(),
            SynthError::BadDuration(0.0)
        );
        assert_eq!(
            generate(&spec(30.0, -1.0)).unwrap_err(),
            SynthError::BadNoise(-1.0)
        );
        let empty = SynthSpec {
            stage_cycle: vec![],
            ..spec(30.0, 1.0)
        };
        assert_eq!(generate(&empty).unwrap_err(), SynthError::BadCycle);
    }

    #[test]
    fn samples_sit_on_the_quantization_grid() {
        let (rec, _) = generate(&spec(60.0, 5.0)).unwrap();
        for (s, data) in rec.signals.iter().zip(&rec.samples) {
            for &v in data.iter().take(500) {
                let q = s.quantize(v as f64) as f32;
                assert_eq!(q, v);
            }
        }
    }

    fn dominant_hz(signal: &[f32]) -> f64 {
        let mut buf: Vec<Complex<f64>> = signal
            .iter()
            .map(|&v| Complex::new(v as f64, 0.0))
            .collect();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        let (bin, _) = buf[1..buf.len() / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        (bin + 1) as f64 * 100.0 / signal.len() as f64
    }

    #[test]
    fn stage_frequencies_by_fft() {
        let (rec, _) = generate(&spec(300.0, 0.0)).unwrap();
        let x = &rec.samples[0];
        // Epoch index in the cycle W W 1 1 2 2 3 3 R R -> expected peak.
        for (k, hz) in [(0, 10.0), (2, 6.0), (4, 4.0), (6, 1.0), (8, 8.0)] {
            let epoch = &x[k * 3000..(k + 1) * 3000];
            assert!(
                (dominant_hz(epoch) - hz).abs() < 1e-9,
                "epoch {k}: {}",
                dominant_hz(epoch)
            );
        }
    }

    #[test]
    fn targets_are_the_stated_transforms() {
        let (rec, _) = generate(&spec(60.0, 5.0)).unwrap();
        let [x, eeg2, eog, emg] = [0, 1, 2, 3].map(|i| &rec.samples[i]);
        let half = rec.signals[0].half_step() as f32;
        // Away from the edges and the clipping range: recompute each target
        // from the stored input.
        for j in [100usize, 1234, 2999, 4500] {
            let xa = |d: isize| x[(j as isize + d) as usize] as f64;
            let e2 = 0.7 * xa(-5) + 0.3 * (xa(-2) + xa(-1) + xa(0) + xa(1) + xa(2)) / 5.0;
            let eo = (2..27).map(|d| xa(-d)).sum::<f64>() / 25.0
                + 50.0 * libm::sin(TAU * 0.2 * j as f64 / 100.0);
            let em = (xa(0) - xa(-1)).abs() * 10.0;
            // Stored input is itself quantized, so allow a few steps.
            assert!(
                (eeg2[j] as f64 - e2).abs() < 4.0 * half as f64,
                "eeg2 at {j}"
            );
            assert!((eog[j] as f64 - eo).abs() < 4.0 * half as f64, "eog at {j}");
            if em < 199.0 {
                assert!(
                    (emg[j] as f64 - em).abs() < 25.0 * half as f64,
                    "emg at {j}"
                );
            }
        }
    }
}
