//! Byte-level EDF / EDF+ reader and writer.
//!
//! Headers are plain ASCII, samples are 16-bit little-endian integers stored
//! record by record. EDF+ files carry their annotations in an
//! `EDF Annotations` pseudo-signal as Time-stamped Annotation Lists (TALs).

use std::fmt::Write as _;
use std::path::Path;

use psgmae_core::recording::{Annotation, EdfRecording, SignalSpec, StartDateTime};

const GLOBAL_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

const ONSET_SEP: u8 = 0x15;
const FIELD_SEP: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Debug, thiserror::Error)]
pub enum EdfError {
    #[error("file is truncated: header promises {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("malformed header field `{field}`: {value:?}")]
    MalformedHeader { field: String, value: String },
    #[error("signal `{signal}` has degenerate calibration (digital_min == digital_max)")]
    DegenerateCalibration { signal: String },
    #[error("malformed annotation list: {0}")]
    MalformedTal(String),
    #[error("signal `{signal}` has {actual} samples, expected {expected}")]
    InconsistentLengths {
        signal: String,
        expected: usize,
        actual: usize,
    },
    #[error("discontinuous EDF+ (EDF+D) files are not supported")]
    Discontinuous,
    #[error("value {value:?} does not fit the {width}-byte header field `{field}`")]
    FieldOverflow {
        field: String,
        value: String,
        width: usize,
    },
    #[error("record {record} needs {needed} annotation bytes, the channel holds {capacity}")]
    AnnotationOverflow {
        record: usize,
        needed: usize,
        capacity: usize,
    },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn read_edf(path: &Path) -> Result<EdfRecording, EdfError> {
    let bytes = std::fs::read(path).map_err(|source| EdfError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_edf(&bytes)
}

pub fn write_edf_file(path: &Path, recording: &EdfRecording) -> Result<(), EdfError> {
    let bytes = write_edf(recording)?;
    std::fs::write(path, bytes).map_err(|source| EdfError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, width: usize) -> &'a [u8] {
        let field = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        field
    }

    fn text(&mut self, width: usize, field: &str) -> Result<String, EdfError> {
        let raw = self.take(width);
        if !raw.is_ascii() {
            return Err(EdfError::MalformedHeader {
                field: field.into(),
                value: String::from_utf8_lossy(raw).into_owned(),
            });
        }
        Ok(std::str::from_utf8(raw)
            .expect("ascii")
            .trim_end()
            .to_string())
    }

    fn number<N: std::str::FromStr>(&mut self, width: usize, field: &str) -> Result<N, EdfError> {
        let text = self.text(width, field)?;
        text.trim().parse().map_err(|_| EdfError::MalformedHeader {
            field: field.into(),
            value: text,
        })
    }
}

fn malformed(field: &str, value: impl Into<String>) -> EdfError {
    EdfError::MalformedHeader {
        field: field.into(),
        value: value.into(),
    }
}

/// Parses a complete EDF or EDF+C file.
///
/// Samples are converted to physical units. An `EDF Annotations` signal is
/// taken out of `signals` and decoded into `annotations`; the time-keeping
/// TAL that opens each record is dropped. Bytes after the last data record
/// are ignored.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfRecording, EdfError> {
    if bytes.len() < GLOBAL_HEADER {
        return Err(EdfError::TruncatedFile {
            expected: GLOBAL_HEADER,
            actual: bytes.len(),
        });
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.text(8, "version")?;
    let patient_id = cur.text(80, "patient_id")?;
    let recording_id = cur.text(80, "recording_id")?;
    let date = cur.text(8, "start date")?;
    let time = cur.text(8, "start time")?;
    let start = parse_start(&date, &time)?;
    let header_bytes: usize = cur.number(8, "header bytes")?;
    let reserved = cur.text(44, "reserved")?;
    let num_records: i64 = cur.number(8, "number of data records")?;
    let record_duration_s: f64 = cur.number(8, "record duration")?;
    let ns: usize = cur.number(4, "number of signals")?;

    if reserved.starts_with("EDF+D") {
        return Err(EdfError::Discontinuous);
    }
    if !(record_duration_s.is_finite() && record_duration_s >= 0.0) {
        return Err(malformed("record duration", record_duration_s.to_string()));
    }
    let expected_header = ns
        .checked_mul(SIGNAL_HEADER)
        .and_then(|v| v.checked_add(GLOBAL_HEADER))
        .ok_or_else(|| malformed("number of signals", ns.to_string()))?;
    if header_bytes != expected_header {
        return Err(malformed("header bytes", header_bytes.to_string()));
    }
    if bytes.len() < expected_header {
        return Err(EdfError::TruncatedFile {
            expected: expected_header,
            actual: bytes.len(),
        });
    }

    // Signal headers are stored field-major: all labels, then all
    // transducers, and so on.
    let mut cols = |width: usize, field: &str| -> Result<Vec<String>, EdfError> {
        (0..ns).map(|_| cur.text(width, field)).collect()
    };
    let labels = cols(16, "label")?;
    let transducers = cols(80, "transducer")?;
    let dims = cols(8, "physical dimension")?;
    let pmins = cols(8, "physical minimum")?;
    let pmaxs = cols(8, "physical maximum")?;
    let dmins = cols(8, "digital minimum")?;
    let dmaxs = cols(8, "digital maximum")?;
    let prefilters = cols(80, "prefilter")?;
    let spr = cols(8, "samples per record")?;
    let _reserved = cols(32, "signal reserved")?;

    let num = |v: &str, field: &str| -> Result<f64, EdfError> {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| malformed(field, v))
    };
    let int = |v: &str, field: &str| -> Result<i32, EdfError> {
        v.trim().parse::<i32>().map_err(|_| malformed(field, v))
    };
    let mut specs = Vec::with_capacity(ns);
    for i in 0..ns {
        let spec = SignalSpec {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: num(&pmins[i], "physical minimum")?,
            physical_max: num(&pmaxs[i], "physical maximum")?,
            digital_min: int(&dmins[i], "digital minimum")?,
            digital_max: int(&dmaxs[i], "digital maximum")?,
            samples_per_record: spr[i]
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| malformed("samples per record", spr[i].as_str()))?,
            prefilter: prefilters[i].clone(),
        };
        if spec.digital_min == spec.digital_max {
            return Err(EdfError::DegenerateCalibration { signal: spec.label });
        }
        specs.push(spec);
    }

    let record_samples = specs
        .iter()
        .try_fold(0usize, |acc, s| acc.checked_add(s.samples_per_record))
        .ok_or_else(|| malformed("samples per record", "overflow"))?;
    let record_bytes = record_samples
        .checked_mul(2)
        .ok_or_else(|| malformed("samples per record", "overflow"))?;
    let data_len = bytes.len() - expected_header;
    let num_records = match num_records {
        // -1 means unknown: take every complete record present.
        -1 if record_bytes > 0 => data_len / record_bytes,
        n if n >= 0 => {
            usize::try_from(n).map_err(|_| malformed("number of data records", n.to_string()))?
        }
        n => return Err(malformed("number of data records", n.to_string())),
    };
    let expected_total = num_records
        .checked_mul(record_bytes)
        .and_then(|v| v.checked_add(expected_header))
        .ok_or_else(|| malformed("number of data records", num_records.to_string()))?;
    if bytes.len() < expected_total {
        return Err(EdfError::TruncatedFile {
            expected: expected_total,
            actual: bytes.len(),
        });
    }

    let annotation_idx = specs.iter().position(SignalSpec::is_annotation);
    for (i, s) in specs.iter().enumerate() {
        if Some(i) != annotation_idx && s.physical_min == s.physical_max {
            return Err(EdfError::DegenerateCalibration {
                signal: s.label.clone(),
            });
        }
    }

    let mut samples: Vec<Vec<f32>> = specs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != annotation_idx)
        .map(|(_, s)| Vec::with_capacity(num_records * s.samples_per_record))
        .collect();
    let mut annotations = Vec::new();
    let mut pos = expected_header;
    for record in 0..num_records {
        let mut out = 0;
        for (i, spec) in specs.iter().enumerate() {
            let n = spec.samples_per_record * 2;
            let chunk = &bytes[pos..pos + n];
            pos += n;
            if Some(i) == annotation_idx {
                let tals = parse_tal(chunk)
                    .map_err(|e| EdfError::MalformedTal(format!("data record {record}: {e}")))?;
                annotations.extend(tals);
                continue;
            }
            let dst = &mut samples[out];
            out += 1;
            dst.extend(chunk.chunks_exact(2).map(|w| {
                let d = i16::from_le_bytes([w[0], w[1]]) as i32;
                spec.to_physical(d) as f32
            }));
        }
    }

    let annotation_signal = annotation_idx.map(|i| specs[i].clone());
    let signals = specs
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != annotation_idx)
        .map(|(_, s)| s)
        .collect();
    Ok(EdfRecording {
        version,
        patient_id,
        recording_id,
        start,
        record_duration_s,
        num_records,
        signals,
        samples,
        annotation_signal,
        annotations,
    })
}

fn parse_start(date: &str, time: &str) -> Result<StartDateTime, EdfError> {
    let parts = |s: &str, field: &str| -> Result<[u8; 3], EdfError> {
        let v: Vec<&str> = s.trim().split(['.', ':']).collect();
        if v.len() != 3 {
            return Err(malformed(field, s));
        }
        let mut out = [0u8; 3];
        for (o, p) in out.iter_mut().zip(v) {
            *o = p.parse().map_err(|_| malformed(field, s))?;
        }
        Ok(out)
    };
    let [day, month, yy] = parts(date, "start date")?;
    let [hour, minute, second] = parts(time, "start time")?;
    if !(1..=31).contains(&day) || !(1..=12).contains(&month) || yy > 99 {
        return Err(malformed("start date", date));
    }
    if hour > 23 || minute > 59 || second > 59 {
        return Err(malformed("start time", time));
    }
    let year = if yy >= 85 {
        1900 + yy as u16
    } else {
        2000 + yy as u16
    };
    Ok(StartDateTime {
        year,
        month,
        day,
        hour,
        minute,
        second,
    })
}

/// Serializes a recording.
///
/// Physical values outside `[physical_min, physical_max]` are clipped to the
/// digital range. The annotation channel, if any, is written after the
/// ordinary signals and the file is marked `EDF+C`. Each of its records
/// opens with a time-keeping TAL followed by the annotations whose onset
/// falls in that record (the last record also takes any later ones).
pub fn write_edf(rec: &EdfRecording) -> Result<Vec<u8>, EdfError> {
    if rec.samples.len() != rec.signals.len() {
        return Err(EdfError::InconsistentLengths {
            signal: "<signal list>".into(),
            expected: rec.signals.len(),
            actual: rec.samples.len(),
        });
    }
    for (spec, samples) in rec.signals.iter().zip(&rec.samples) {
        if spec.digital_min == spec.digital_max || spec.physical_min == spec.physical_max {
            return Err(EdfError::DegenerateCalibration {
                signal: spec.label.clone(),
            });
        }
        let expected = rec.num_records * spec.samples_per_record;
        if samples.len() != expected || spec.samples_per_record == 0 {
            return Err(EdfError::InconsistentLengths {
                signal: spec.label.clone(),
                expected,
                actual: samples.len(),
            });
        }
    }
    let tal_records = match &rec.annotation_signal {
        Some(spec) => {
            if spec.digital_min == spec.digital_max {
                return Err(EdfError::DegenerateCalibration {
                    signal: spec.label.clone(),
                });
            }
            Some(annotation_records(rec, spec.samples_per_record * 2)?)
        }
        None => None,
    };

    let specs: Vec<&SignalSpec> = rec.signals.iter().chain(&rec.annotation_signal).collect();
    let ns = specs.len();
    let mut h = Header::default();
    h.text(&rec.version, 8, "version")?;
    h.text(&rec.patient_id, 80, "patient_id")?;
    h.text(&rec.recording_id, 80, "recording_id")?;
    let s = rec.start;
    if !(1985..=2084).contains(&s.year) {
        return Err(EdfError::FieldOverflow {
            field: "start date".into(),
            value: s.year.to_string(),
            width: 8,
        });
    }
    h.text(
        &format!("{:02}.{:02}.{:02}", s.day, s.month, s.year % 100),
        8,
        "start date",
    )?;
    h.text(
        &format!("{:02}.{:02}.{:02}", s.hour, s.minute, s.second),
        8,
        "start time",
    )?;
    h.text(
        &(GLOBAL_HEADER + SIGNAL_HEADER * ns).to_string(),
        8,
        "header bytes",
    )?;
    h.text(
        if tal_records.is_some() { "EDF+C" } else { "" },
        44,
        "reserved",
    )?;
    h.text(&rec.num_records.to_string(), 8, "number of data records")?;
    h.text(
        &format_number(rec.record_duration_s, 8, "record duration")?,
        8,
        "record duration",
    )?;
    h.text(&ns.to_string(), 4, "number of signals")?;
    for s in &specs {
        h.text(&s.label, 16, "label")?;
    }
    for s in &specs {
        h.text(&s.transducer, 80, "transducer")?;
    }
    for s in &specs {
        h.text(&s.physical_dimension, 8, "physical dimension")?;
    }
    for s in &specs {
        h.text(
            &format_number(s.physical_min, 8, "physical minimum")?,
            8,
            "physical minimum",
        )?;
    }
    for s in &specs {
        h.text(
            &format_number(s.physical_max, 8, "physical maximum")?,
            8,
            "physical maximum",
        )?;
    }
    for s in &specs {
        h.text(&s.digital_min.to_string(), 8, "digital minimum")?;
    }
    for s in &specs {
        h.text(&s.digital_max.to_string(), 8, "digital maximum")?;
    }
    for s in &specs {
        h.text(&s.prefilter, 80, "prefilter")?;
    }
    for s in &specs {
        h.text(&s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for _ in &specs {
        h.text("", 32, "signal reserved")?;
    }
    for s in &specs {
        for (name, v) in [
            ("digital minimum", s.digital_min),
            ("digital maximum", s.digital_max),
        ] {
            if i16::try_from(v).is_err() {
                return Err(EdfError::FieldOverflow {
                    field: name.into(),
                    value: v.to_string(),
                    width: 16,
                });
            }
        }
    }

    let mut out = h.0;
    for r in 0..rec.num_records {
        for (spec, samples) in rec.signals.iter().zip(&rec.samples) {
            let n = spec.samples_per_record;
            for &v in &samples[r * n..(r + 1) * n] {
                let d = spec.to_digital(v as f64) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        if let Some(records) = &tal_records {
            out.extend_from_slice(&records[r]);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Header(Vec<u8>);

impl Header {
    fn text(&mut self, value: &str, width: usize, field: &str) -> Result<(), EdfError> {
        if value.len() > width || !value.bytes().all(|b| (0x20..0x7f).contains(&b)) {
            return Err(EdfError::FieldOverflow {
                field: field.into(),
                value: value.into(),
                width,
            });
        }
        self.0.extend_from_slice(value.as_bytes());
        self.0
            .extend(std::iter::repeat_n(b' ', width - value.len()));
        Ok(())
    }
}

/// Shortest text for `v` that fits `width` characters: the exact decimal
/// form if it fits, otherwise the most decimals that do.
fn format_number(v: f64, width: usize, field: &str) -> Result<String, EdfError> {
    let overflow = || EdfError::FieldOverflow {
        field: field.into(),
        value: v.to_string(),
        width,
    };
    if !v.is_finite() {
        return Err(overflow());
    }
    let exact = v.to_string();
    if exact.len() <= width {
        return Ok(exact);
    }
    for decimals in (0..width).rev() {
        let s = format!("{v:.decimals$}");
        if s.len() <= width {
            // Avoid "-0" and trailing zeros left by rounding.
            let s = if s.contains('.') {
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            } else {
                s
            };
            return Ok(if s == "-0" { "0".into() } else { s });
        }
    }
    Err(overflow())
}

/// Index of the data record an annotation is stored in.
fn record_of(a: &Annotation, record_duration_s: f64, num_records: usize) -> usize {
    if record_duration_s > 0.0 && a.onset_s > 0.0 {
        ((a.onset_s / record_duration_s) as usize).min(num_records - 1)
    } else {
        0
    }
}

/// Annotation channel content of every data record, before padding.
fn encode_annotation_records(
    rec: &EdfRecording,
    num_records: usize,
) -> Result<Vec<Vec<u8>>, EdfError> {
    if num_records == 0 {
        return Ok(Vec::new());
    }
    let mut per_record: Vec<Vec<&Annotation>> = vec![Vec::new(); num_records];
    for a in &rec.annotations {
        per_record[record_of(a, rec.record_duration_s, num_records)].push(a);
    }
    per_record
        .iter()
        .enumerate()
        .map(|(r, anns)| {
            let mut bytes = time_keeping_tal(r as f64 * rec.record_duration_s);
            bytes.extend(write_tal(anns.iter().copied())?);
            Ok(bytes)
        })
        .collect()
}

fn annotation_records(rec: &EdfRecording, capacity: usize) -> Result<Vec<Vec<u8>>, EdfError> {
    if rec.num_records == 0 && !rec.annotations.is_empty() {
        return Err(EdfError::AnnotationOverflow {
            record: 0,
            needed: rec.annotations.len(),
            capacity: 0,
        });
    }
    let mut records = encode_annotation_records(rec, rec.num_records)?;
    for (r, bytes) in records.iter_mut().enumerate() {
        if bytes.len() > capacity {
            return Err(EdfError::AnnotationOverflow {
                record: r,
                needed: bytes.len(),
                capacity,
            });
        }
        bytes.resize(capacity, TAL_END);
    }
    Ok(records)
}

/// Annotation channel bytes per record that [`write_edf`] needs to store
/// `rec.annotations`.
pub fn annotation_capacity(rec: &EdfRecording) -> Result<usize, EdfError> {
    let records = encode_annotation_records(rec, rec.num_records.max(1))?;
    Ok(records.iter().map(Vec::len).max().unwrap_or(0))
}

fn time_keeping_tal(onset: f64) -> Vec<u8> {
    let mut out = format_onset(onset).into_bytes();
    out.extend_from_slice(&[FIELD_SEP, FIELD_SEP, TAL_END]);
    out
}

fn format_onset(onset: f64) -> String {
    let mut s = String::new();
    if onset >= 0.0 {
        s.push('+');
    }
    write!(s, "{onset}").expect("write to string");
    s
}

/// Encodes annotations as one TAL each. Zero durations are omitted.
pub fn write_tal<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
) -> Result<Vec<u8>, EdfError> {
    let mut out = Vec::new();
    for a in annotations {
        if !a.onset_s.is_finite() || !a.duration_s.is_finite() || a.duration_s < 0.0 {
            return Err(EdfError::MalformedTal(format!(
                "cannot encode onset {} / duration {}",
                a.onset_s, a.duration_s
            )));
        }
        if a.label.is_empty()
            || a.label
                .bytes()
                .any(|b| matches!(b, ONSET_SEP | FIELD_SEP | TAL_END))
        {
            return Err(EdfError::MalformedTal(format!(
                "cannot encode label {:?}",
                a.label
            )));
        }
        out.extend(format_onset(a.onset_s).bytes());
        if a.duration_s > 0.0 {
            out.push(ONSET_SEP);
            out.extend(a.duration_s.to_string().bytes());
        }
        out.push(FIELD_SEP);
        out.extend(a.label.bytes());
        out.push(FIELD_SEP);
        out.push(TAL_END);
    }
    Ok(out)
}

/// Decodes the TALs in one annotation-channel record.
///
/// Every TAL is `±onset[0x15 duration]0x14 (label 0x14)* 0x00`; each
/// non-empty label becomes one [`Annotation`]. Zero bytes after the last
/// TAL are padding.
pub fn parse_tal(bytes: &[u8]) -> Result<Vec<Annotation>, EdfError> {
    let mut out = Vec::new();
    let mut rest = bytes;
    loop {
        let start = rest.iter().position(|&b| b != TAL_END);
        let Some(start) = start else { break };
        rest = &rest[start..];
        let end = rest
            .iter()
            .position(|&b| b == TAL_END)
            .ok_or_else(|| EdfError::MalformedTal("missing 0x00 terminator".into()))?;
        parse_one_tal(&rest[..end], &mut out)?;
        rest = &rest[end + 1..];
    }
    Ok(out)
}

fn parse_one_tal(tal: &[u8], out: &mut Vec<Annotation>) -> Result<(), EdfError> {
    let bad =
        |msg: &str| EdfError::MalformedTal(format!("{msg} in {:?}", String::from_utf8_lossy(tal)));
    let head_end = tal
        .iter()
        .position(|&b| b == FIELD_SEP)
        .ok_or_else(|| bad("missing 0x14 after onset"))?;
    if tal.last() != Some(&FIELD_SEP) {
        return Err(bad("missing 0x14 before terminator"));
    }
    let head = &tal[..head_end];
    let (onset, duration) = match head.iter().position(|&b| b == ONSET_SEP) {
        Some(i) => (&head[..i], Some(&head[i + 1..])),
        None => (head, None),
    };
    if !matches!(onset.first(), Some(b'+' | b'-')) {
        return Err(bad("onset must start with + or -"));
    }
    let onset_s = parse_decimal(onset, true).ok_or_else(|| bad("non-numeric onset"))?;
    let duration_s = match duration {
        Some(d) => parse_decimal(d, false).ok_or_else(|| bad("non-numeric duration"))?,
        None => 0.0,
    };
    // `+onset 0x14 0x00` carries no labels; the 0x14 closing the onset is
    // then also the last byte.
    let labels = tal.get(head_end + 1..tal.len() - 1).unwrap_or(&[]);
    for label in labels.split(|&b| b == FIELD_SEP) {
        if label.is_empty() {
            continue;
        }
        let label = std::str::from_utf8(label).map_err(|_| bad("label is not UTF-8"))?;
        out.push(Annotation::new(onset_s, duration_s, label));
    }
    Ok(())
}

/// Plain decimal number: optional sign (only if `signed`), digits, optional
/// fraction. No exponents, no whitespace.
fn parse_decimal(bytes: &[u8], signed: bool) -> Option<f64> {
    let body = match bytes.first() {
        Some(b'+' | b'-') if signed => &bytes[1..],
        _ => bytes,
    };
    let mut parts = body.splitn(2, |&b| b == b'.');
    let int = parts.next()?;
    let frac = parts.next();
    let digits = |s: &[u8]| s.iter().all(u8::is_ascii_digit);
    if int.is_empty() || !digits(int) || frac.is_some_and(|f| f.is_empty() || !digits(f)) {
        return None;
    }
    std::str::from_utf8(bytes).ok()?.parse().ok()
}

/// Annotation-only EDF+ file holding a hypnogram, in the layout Sleep-EDF
/// uses: one data record of duration 0.
pub fn hypnogram_recording(
    start: StartDateTime,
    patient_id: &str,
    annotations: Vec<Annotation>,
) -> Result<EdfRecording, EdfError> {
    let mut rec = EdfRecording {
        version: "0".into(),
        patient_id: patient_id.into(),
        recording_id: "Startdate X X X hypnogram".into(),
        start,
        record_duration_s: 0.0,
        num_records: 1,
        signals: Vec::new(),
        samples: Vec::new(),
        annotation_signal: None,
        annotations,
    };
    let bytes = annotation_capacity(&rec)?;
    rec.annotation_signal = Some(SignalSpec::annotation(bytes));
    Ok(rec)
}
