//! CSV forms of the MSE table and of single-epoch reconstructions.

use std::path::Path;

use psgmae_core::eval::{EvalError, MseRow, MseTable, Reconstruction, StageCell};
use psgmae_core::pipeline::{denormalize, EpochRecord, SleepStage, TARGET_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad report row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error(transparent)]
    Table(#[from] EvalError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn header() -> Vec<String> {
    let mut h = vec!["input".to_string(), "target".to_string()];
    for s in SleepStage::ALL {
        let name = s.name().to_ascii_lowercase();
        h.push(format!("{name}_mse"));
        h.push(format!("{name}_count"));
    }
    h
}

/// One row per (input, target) in table order with an MSE and a count
/// column per stage. Empty stages leave both fields blank. Values are
/// written with the shortest representation that parses back exactly.
pub fn table_to_csv(table: &MseTable) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header())?;
    for r in table.rows() {
        let mut rec = vec![r.input.clone(), r.target.clone()];
        for c in &r.cells {
            match c {
                Some(c) => {
                    rec.push(c.mean_mse.to_string());
                    rec.push(c.epoch_count.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub fn table_from_csv(text: &str) -> Result<MseTable, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().collect::<Vec<_>>() != header() {
        return Err(ReportError::BadRow {
            row: 0,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| ReportError::BadRow {
            row: i + 1,
            message,
        };
        let mut cells = [None; 5];
        for (k, cell) in cells.iter_mut().enumerate() {
            let (m, n) = (&rec[2 + 2 * k], &rec[3 + 2 * k]);
            *cell = match (m.is_empty(), n.is_empty()) {
                (true, true) => None,
                (false, false) => Some(StageCell {
                    mean_mse: m.parse().map_err(|_| bad(format!("bad mse {m:?}")))?,
                    epoch_count: n.parse().map_err(|_| bad(format!("bad count {n:?}")))?,
                }),
                _ => {
                    return Err(bad(
                        "mse and count must both be present or both empty".into()
                    ))
                }
            };
        }
        rows.push(MseRow {
            input: rec[0].to_string(),
            target: rec[1].to_string(),
            cells,
        });
    }
    Ok(MseTable::new(rows)?)
}

/// Writes one epoch's targets and their reconstructions in physical units,
/// 3000 rows per target channel:
/// `channel,time_s,original,reconstructed`.
///
/// `reconstructions` are on the normalized scale and are mapped back with
/// the target's stored mean and std.
pub fn reconstruction_csv(
    record: &EpochRecord,
    reconstructions: &[Reconstruction],
) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["channel", "time_s", "original", "reconstructed"])?;
    for t in &record.targets {
        let rec = reconstructions
            .iter()
            .find(|r| r.channel == t.name)
            .ok_or_else(|| EvalError::MissingReconstruction(t.name.clone()))?;
        if rec.samples.len() != t.samples.len() {
            return Err(EvalError::LengthMismatch {
                pred: rec.samples.len(),
                orig: t.samples.len(),
            }
            .into());
        }
        let original = t.physical();
        let reconstructed = denormalize(&rec.samples, t.norm);
        for (i, (o, r)) in original.iter().zip(&reconstructed).enumerate() {
            let time = format!("{:.2}", i as f64 / TARGET_RATE_HZ);
            w.write_record([t.name.as_str(), &time, &o.to_string(), &r.to_string()])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
