use proptest::prelude::*;
use psgmae::edf::{annotation_capacity, parse_edf, write_edf};
use psgmae_core::recording::{Annotation, EdfRecording, SignalSpec, StartDateTime};

fn printable(max: usize) -> impl Strategy<Value = String> {
    // No trailing blanks: the header pads with spaces and the parser trims
    // them.
    prop::string::string_regex(&format!(
        "([!-~][ -~]{{0,{}}})?[!-~]?",
        max.saturating_sub(2)
    ))
    .unwrap()
    .prop_filter("fits", move |s| s.len() <= max && !s.ends_with(' '))
}

fn signal_strategy() -> impl Strategy<Value = SignalSpec> {
    (
        printable(16).prop_filter("not an annotation label", |l| l != "EDF Annotations"),
        printable(80),
        printable(8),
        -99_999i32..99_999,
        1i32..100_000,
        -32_768i32..0,
        1i32..=65_535,
        1usize..40,
        printable(80),
    )
        .prop_map(
            |(label, transducer, dim, pmin, span, dmin, dspan, spr, prefilter)| SignalSpec {
                label,
                transducer,
                physical_dimension: dim,
                physical_min: pmin as f64 / 10.0,
                physical_max: (pmin + span) as f64 / 10.0,
                digital_min: dmin,
                digital_max: (dmin + dspan).min(32_767),
                samples_per_record: spr,
                prefilter,
            },
        )
}

pub fn recording_strategy() -> impl Strategy<Value = EdfRecording> {
    let start = (
        1985u16..=2084,
        1u8..=12,
        1u8..=28,
        0u8..24,
        0u8..60,
        0u8..60,
    )
        .prop_map(|(year, month, day, hour, minute, second)| StartDateTime {
            year,
            month,
            day,
            hour,
            minute,
            second,
        });
    (
        printable(8),
        printable(80),
        printable(80),
        start,
        prop::sample::select(vec![0.5, 1.0, 2.5, 30.0]),
        0usize..4,
        prop::collection::vec(signal_strategy(), 0..4),
        any::<bool>(),
    )
        .prop_flat_map(
            |(version, patient, recording, start, dur, nrec, signals, plus)| {
                let samples: Vec<_> = signals
                    .iter()
                    .map(|s| {
                        let lo = s.physical_min.min(s.physical_max);
                        let hi = s.physical_max.max(s.physical_min);
                        let pad = (hi - lo) * 0.1;
                        prop::collection::vec((lo - pad)..(hi + pad), nrec * s.samples_per_record)
                            .prop_map(|v| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>())
                    })
                    .collect();
                let label = prop::string::string_regex("[A-Za-z0-9 ?]{0,18}[A-Za-z0-9?]").unwrap();
                let max_onset = (nrec as f64 * dur * 2.0) as u32;
                let annotations = prop::collection::vec((0..=max_onset, 0u32..240, label), 0..6)
                    .prop_map(|mut v| {
                        v.sort_by_key(|a| a.0);
                        v.into_iter()
                            .map(|(o, d, l)| Annotation::new(o as f64 / 2.0, d as f64 / 4.0, l))
                            .collect::<Vec<_>>()
                    });
                (
                    Just((version, patient, recording, start, dur, nrec, signals, plus)),
                    samples,
                    annotations,
                )
            },
        )
        .prop_map(
            |(
                (version, patient_id, recording_id, start, dur, nrec, signals, plus),
                samples,
                annotations,
            )| {
                let plus = plus && nrec > 0;
                let mut rec = EdfRecording {
                    version,
                    patient_id,
                    recording_id,
                    start,
                    record_duration_s: dur,
                    num_records: nrec,
                    signals,
                    samples,
                    annotation_signal: None,
                    annotations: if plus { annotations } else { vec![] },
                };
                if plus {
                    rec.annotation_signal =
                        Some(SignalSpec::annotation(annotation_capacity(&rec).unwrap()));
                }
                rec
            },
        )
}

/// Writes and re-parses `rec`: header fields must come back exactly and
/// every sample within half a quantization step of its clipped value.
pub fn round_trip_error(rec: &EdfRecording) -> Result<(), String> {
    let back = parse_edf(&write_edf(rec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let header = |r: &EdfRecording| {
        (
            r.version.clone(),
            r.patient_id.clone(),
            r.recording_id.clone(),
            r.start,
            r.record_duration_s,
            r.num_records,
            r.signals.clone(),
            r.annotation_signal.clone(),
            r.annotations.clone(),
        )
    };
    if header(&back) != header(rec) {
        return Err(format!(
            "header differs:\n{:?}\n{:?}",
            header(rec),
            header(&back)
        ));
    }
    for (i, s) in rec.signals.iter().enumerate() {
        let lo = s.physical_min.min(s.physical_max);
        let hi = s.physical_max.max(s.physical_min);
        let bound = (s.physical_max - s.physical_min).abs()
            / (2.0 * (s.digital_max - s.digital_min) as f64);
        // Parsed values are stored as f32, adding at most half an ulp.
        let slack = f32::EPSILON as f64 * lo.abs().max(hi.abs());
        if back.samples[i].len() != rec.samples[i].len() {
            return Err(format!("signal {i}: sample count"));
        }
        for (&x, &y) in rec.samples[i].iter().zip(&back.samples[i]) {
            let clipped = (x as f64).clamp(lo, hi);
            if (clipped - y as f64).abs() > bound + slack {
                return Err(format!("signal {i} x={x} y={y} bound={bound}"));
            }
        }
    }
    Ok(())
}
