//! In-memory form of an EDF/EDF+ recording.
//!
//! Byte-level parsing and writing live in the `psgmae` crate; this module
//! holds the types and the digital/physical calibration shared by the parser,
//! the writer and the synthetic generator.

use alloc::string::String;
use alloc::vec::Vec;

/// Label of the EDF+ annotation pseudo-signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Header of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
    pub prefilter: String,
}

impl SignalSpec {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    /// Spec of an annotation channel with room for `bytes` TAL bytes per
    /// data record (rounded up to whole 2-byte samples).
    pub fn annotation(bytes: usize) -> Self {
        Self {
            label: ANNOTATION_LABEL.into(),
            transducer: String::new(),
            physical_dimension: String::new(),
            physical_min: -1.0,
            physical_max: 1.0,
            digital_min: -32768,
            digital_max: 32767,
            samples_per_record: bytes.div_ceil(2).max(1),
            prefilter: String::new(),
        }
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    /// Linear digital → physical mapping.
    pub fn to_physical(&self, digital: i32) -> f64 {
        (digital - self.digital_min) as f64 * self.gain() + self.physical_min
    }

    /// Inverse mapping, rounded to nearest and clipped to the digital range.
    pub fn to_digital(&self, physical: f64) -> i32 {
        let span = self.physical_max - self.physical_min;
        let d = if span == 0.0 {
            self.digital_min as f64
        } else {
            (physical - self.physical_min) * (self.digital_max - self.digital_min) as f64 / span
                + self.digital_min as f64
        };
        let d = if d.is_nan() {
            self.digital_min as f64
        } else {
            libm::round(d)
        };
        let (lo, hi) = self.digital_bounds();
        (d.clamp(lo as f64, hi as f64)) as i32
    }

    /// Physical value actually stored for `physical` after quantization.
    pub fn quantize(&self, physical: f64) -> f64 {
        self.to_physical(self.to_digital(physical))
    }

    /// Half of one quantization step, the round-trip error bound.
    pub fn half_step(&self) -> f64 {
        libm::fabs(self.gain()) / 2.0
    }

    fn digital_bounds(&self) -> (i32, i32) {
        (
            self.digital_min.min(self.digital_max),
            self.digital_min.max(self.digital_max),
        )
    }

    /// Samples per second given the record duration.
    pub fn sample_rate(&self, record_duration_s: f64) -> f64 {
        self.samples_per_record as f64 / record_duration_s
    }
}

/// Start of recording as written in the EDF header (`dd.mm.yy`, `hh.mm.ss`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StartDateTime {
    /// Full year; EDF's two-digit years map to 1985–2084.
    pub year: u16,
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
}

/// One entry of an EDF+ Time-stamped Annotation List.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset_s: f64,
    pub duration_s: f64,
    pub label: String,
}

impl Annotation {
    pub fn new(onset_s: f64, duration_s: f64, label: impl Into<String>) -> Self {
        Self {
            onset_s,
            duration_s,
            label: label.into(),
        }
    }
}

/// Parsed EDF/EDF+ file with samples in physical units.
///
/// For every ordinary signal `i`,
/// `samples[i].len() == num_records * signals[i].samples_per_record`. An
/// EDF+ annotation channel is not part of `signals`; its spec is kept in
/// `annotation_signal` and its content in `annotations`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfRecording {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start: StartDateTime,
    pub record_duration_s: f64,
    pub num_records: usize,
    pub signals: Vec<SignalSpec>,
    pub samples: Vec<Vec<f32>>,
    pub annotation_signal: Option<SignalSpec>,
    pub annotations: Vec<Annotation>,
}

impl EdfRecording {
    /// Index of the signal whose label matches `name` (trimmed,
    /// case-insensitive).
    pub fn signal_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.signals
            .iter()
            .position(|s| s.label.trim().eq_ignore_ascii_case(name))
    }

    pub fn duration_s(&self) -> f64 {
        self.num_records as f64 * self.record_duration_s
    }

    pub fn is_edf_plus(&self) -> bool {
        self.annotation_signal.is_some()
    }
}
