//! Per-stage reconstruction error and the input × target × stage table.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::mae::{MaeError, MaeModel, MaskPlan};
use crate::pipeline::{denormalize, normalize_epoch, EpochRecord, SleepStage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: prediction has {pred} samples, original {orig}")]
    LengthMismatch { pred: usize, orig: usize },
    #[error("row reconstructs input channel `{0}` from itself")]
    SelfReconstructionRow(String),
    #[error("duplicate row {input} -> {target}")]
    DuplicateRow { input: String, target: String },
    #[error("no reconstruction for target `{0}`")]
    MissingReconstruction(String),
}

/// Mean squared difference, accumulated in `f64`.
pub fn mse(pred: &[f32], orig: &[f32]) -> Result<f64, EvalError> {
    if pred.len() != orig.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            orig: orig.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(orig)
        .map(|(&p, &o)| {
            let d = p as f64 - o as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Maps a raw head output onto the scale of the normalized targets.
///
/// The training loss only sees the direction of each patch, so the raw
/// output carries no meaningful amplitude. Every target is z-scored per
/// epoch, so the output is z-scored the same way before any MSE is taken.
pub fn calibrate(raw: &[f32]) -> Vec<f32> {
    normalize_epoch(raw).0
}

/// Units in which MSE is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseUnits {
    /// Per-epoch z-scored signals.
    #[default]
    Normalized,
    /// Both signals mapped back through the target's stored mean and std.
    Physical,
}

/// Calibrated reconstruction of one target channel for one epoch, on the
/// normalized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub channel: String,
    pub samples: Vec<f32>,
}

/// MSE of every target of `record` against its reconstruction.
pub fn epoch_mse(
    record: &EpochRecord,
    reconstructions: &[Reconstruction],
    units: MseUnits,
) -> Result<Vec<(String, f64)>, EvalError> {
    record
        .targets
        .iter()
        .map(|t| {
            let rec = reconstructions
                .iter()
                .find(|r| r.channel == t.name)
                .ok_or_else(|| EvalError::MissingReconstruction(t.name.clone()))?;
            let value = match units {
                MseUnits::Normalized => mse(&rec.samples, &t.samples)?,
                MseUnits::Physical => mse(&denormalize(&rec.samples, t.norm), &t.physical())?,
            };
            Ok((t.name.clone(), value))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCell {
    pub mean_mse: f64,
    pub epoch_count: usize,
}

/// One (input, target) row; `cells` is indexed by [`SleepStage::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub input: String,
    pub target: String,
    pub cells: [Option<StageCell>; 5],
}

impl MseRow {
    pub fn cell(&self, stage: SleepStage) -> Option<StageCell> {
        self.cells[stage.index()]
    }
}

/// Mean MSE per (input channel, target channel, sleep stage). Stages with
/// no epochs are `None`, never zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MseTable {
    rows: Vec<MseRow>,
}

impl MseTable {
    /// Builds a table, rejecting self-reconstruction and duplicate rows.
    /// Rows are put in canonical order (see [`channel_rank`]).
    pub fn new(mut rows: Vec<MseRow>) -> Result<Self, EvalError> {
        for (i, r) in rows.iter().enumerate() {
            if same_channel(&r.input, &r.target) {
                return Err(EvalError::SelfReconstructionRow(r.input.clone()));
            }
            if rows[..i]
                .iter()
                .any(|o| same_channel(&o.input, &r.input) && same_channel(&o.target, &r.target))
            {
                return Err(EvalError::DuplicateRow {
                    input: r.input.clone(),
                    target: r.target.clone(),
                });
            }
        }
        rows.sort_by(|a, b| {
            channel_rank(&a.input)
                .cmp(&channel_rank(&b.input))
                .then_with(|| channel_rank(&a.target).cmp(&channel_rank(&b.target)))
        });
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[MseRow] {
        &self.rows
    }

    pub fn row(&self, input: &str, target: &str) -> Option<&MseRow> {
        self.rows
            .iter()
            .find(|r| same_channel(&r.input, input) && same_channel(&r.target, target))
    }

    /// Distinct input channels in row order.
    pub fn inputs(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|i| same_channel(i, &r.input)) {
                out.push(&r.input);
            }
        }
        out
    }

    /// Union of two tables (e.g. the EEG-input and EOG-input models).
    pub fn merge(self, other: MseTable) -> Result<Self, EvalError> {
        let mut rows = self.rows;
        rows.extend(other.rows);
        Self::new(rows)
    }
}

/// Reconstructs every target of `record` with all tokens visible and
/// calibrates each one.
pub fn reconstruct_epoch(
    model: &MaeModel<f32>,
    record: &EpochRecord,
) -> Result<Vec<Reconstruction>, MaeError> {
    let config = &model.config;
    if record.input.samples.len() != config.epoch_len() {
        return Err(MaeError::WrongLength {
            expected: config.epoch_len(),
            got: record.input.samples.len(),
        });
    }
    let raw = model.reconstruct(&record.input.samples, &MaskPlan::none(config.seq_len))?;
    let n = config.epoch_len();
    Ok(config
        .target_channels
        .iter()
        .enumerate()
        .map(|(k, name)| Reconstruction {
            channel: name.clone(),
            samples: calibrate(&raw.data()[k * n..(k + 1) * n]),
        })
        .collect())
}

/// Averages per-epoch MSE by (input, target, stage) in record order.
pub fn aggregate_by_stage<'a, I>(items: I, units: MseUnits) -> Result<MseTable, EvalError>
where
    I: IntoIterator<Item = (&'a EpochRecord, &'a [Reconstruction])>,
{
    // (input, target) -> per-stage (sum, count)
    let mut acc: Vec<(String, String, [(f64, usize); 5])> = Vec::new();
    for (record, recs) in items {
        for (target, value) in epoch_mse(record, recs, units)? {
            let pos = match acc
                .iter()
                .position(|(i, t, _)| *i == record.input.name && *t == target)
            {
                Some(p) => p,
                None => {
                    acc.push((record.input.name.clone(), target, [(0.0, 0); 5]));
                    acc.len() - 1
                }
            };
            let slot = &mut acc[pos].2[record.stage.index()];
            slot.0 += value;
            slot.1 += 1;
        }
    }
    let rows = acc
        .into_iter()
        .map(|(input, target, sums)| MseRow {
            input,
            target,
            cells: sums.map(|(sum, n)| {
                (n > 0).then(|| StageCell {
                    mean_mse: sum / n as f64,
                    epoch_count: n,
                })
            }),
        })
        .collect();
    MseTable::new(rows)
}

fn same_channel(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Label used in reports: `EEG (FPz-Cz)`, `EEG (Pz-Oz)`, `EOG`, `EMG`, or
/// the trimmed channel name for anything else.
pub fn display_label(channel: &str) -> String {
    match channel_rank(channel).0 {
        0 => "EEG (FPz-Cz)".into(),
        1 => "EOG".into(),
        2 => "EMG".into(),
        3 => "EEG (Pz-Oz)".into(),
        _ => channel.trim().to_string(),
    }
}

/// Sort key giving the report order FPz-Cz, EOG, EMG, Pz-Oz, then other
/// channels by name.
pub fn channel_rank(channel: &str) -> (u8, String) {
    let lower = channel.trim().to_ascii_lowercase();
    let rank = if lower.contains("fpz-cz") {
        0
    } else if lower.starts_with("eog") {
        1
    } else if lower.starts_with("emg") {
        2
    } else if lower.contains("pz-oz") {
        3
    } else {
        4
    };
    (rank, if rank == 4 { lower } else { String::new() })
}

impl core::fmt::Display for MseTable {
    /// Aligned text in the layout `Input | Reconstruction | Wake | N1 | N2 |
    /// N3 | REM`, one decimal place, `-` for empty cells. The input label is
    /// printed on the first row of its group only.
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let header: Vec<String> = ["Input", "Reconstruction"]
            .into_iter()
            .map(String::from)
            .chain(SleepStage::ALL.iter().map(|s| s.name().to_string()))
            .collect();
        let mut lines: Vec<Vec<String>> = Vec::new();
        let mut last_input: Option<&str> = None;
        for r in &self.rows {
            let first = last_input.is_none_or(|l| !same_channel(l, &r.input));
            last_input = Some(&r.input);
            let mut cols = alloc::vec![
                if first {
                    display_label(&r.input)
                } else {
                    String::new()
                },
                display_label(&r.target)
            ];
            cols.extend(r.cells.iter().map(|c| match c {
                Some(c) => format!("{:.1}", c.mean_mse),
                None => "-".into(),
            }));
            lines.push(cols);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                lines
                    .iter()
                    .map(|l| l[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let write_line = |f: &mut core::fmt::Formatter<'_>, cols: &[String]| -> core::fmt::Result {
            let cells: Vec<String> = cols
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    if i < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            writeln!(f, "{}", cells.join(" | ").trim_end())
        };
        write_line(f, &header)?;
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        writeln!(f, "{}", rule.join("-+-"))?;
        for l in &lines {
            write_line(f, l)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ChannelEpoch, NormParams};
    use alloc::vec;

    fn rec(stage: SleepStage, input: &str, targets: &[(&str, Vec<f32>)]) -> EpochRecord {
        let norm = NormParams {
            mean: 1.0,
            std: 2.0,
        };
        EpochRecord {
            subject_id: "s".into(),
            epoch_index: 0,
            stage,
            input: ChannelEpoch {
                name: input.into(),
                samples: vec![0.0; 4],
                norm,
            },
            targets: targets
                .iter()
                .map(|(n, s)| ChannelEpoch {
                    name: (*n).into(),
                    samples: s.clone(),
                    norm,
                })
                .collect(),
        }
    }

    #[test]
    fn mse_by_hand() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(
            mse(&[0.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { pred: 1, orig: 2 })
        );
    }

    #[test]
    fn singleton_and_pair_means() {
        let zero = vec![0.0f32; 4];
        let recs_for = |err: f32| {
            vec![Reconstruction {
                channel: "EOG".into(),
                samples: vec![err; 4],
            }]
        };
        let a = rec(SleepStage::N2, "EEG Fpz-Cz", &[("EOG", zero.clone())]);
        let ra = recs_for(0.4f32.sqrt());
        let t = aggregate_by_stage([(&a, ra.as_slice())], MseUnits::Normalized).unwrap();
        let row = t.row("EEG Fpz-Cz", "EOG").unwrap();
        let n2 = row.cell(SleepStage::N2).unwrap();
        assert!((n2.mean_mse - 0.4).abs() < 1e-7);
        assert_eq!(n2.epoch_count, 1);
        assert!(row.cell(SleepStage::Wake).is_none());

        let w1 = rec(SleepStage::Wake, "EEG Fpz-Cz", &[("EOG", zero.clone())]);
        let w2 = rec(SleepStage::Wake, "EEG Fpz-Cz", &[("EOG", zero)]);
        let (r1, r2) = (recs_for(1.0), recs_for(3.0f32.sqrt()));
        let t = aggregate_by_stage(
            [(&w1, r1.as_slice()), (&w2, r2.as_slice())],
            MseUnits::Normalized,
        )
        .unwrap();
        let wake = t
            .row("EEG Fpz-Cz", "EOG")
            .unwrap()
            .cell(SleepStage::Wake)
            .unwrap();
        assert!((wake.mean_mse - 2.0).abs() < 1e-6);
        assert_eq!(wake.epoch_count, 2);
    }

    #[test]
    fn physical_units_scale_by_std_squared() {
        let a = rec(SleepStage::N1, "EOG", &[("EMG", vec![0.0; 4])]);
        let r = vec![Reconstruction {
            channel: "EMG".into(),
            samples: vec![1.0; 4],
        }];
        let n = epoch_mse(&a, &r, MseUnits::Normalized).unwrap();
        let p = epoch_mse(&a, &r, MseUnits::Physical).unwrap();
        assert_eq!(n[0].1, 1.0);
        assert!((p[0].1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn missing_reconstruction_is_an_error() {
        let a = rec(SleepStage::N1, "EOG", &[("EMG", vec![0.0; 4])]);
        assert_eq!(
            epoch_mse(&a, &[], MseUnits::Normalized),
            Err(EvalError::MissingReconstruction("EMG".into()))
        );
    }

    #[test]
    fn table_rejects_self_rows_and_duplicates() {
        let row = |i: &str, t: &str| MseRow {
            input: i.into(),
            target: t.into(),
            cells: [None; 5],
        };
        assert_eq!(
            MseTable::new(vec![row("EOG horizontal", "eog horizontal ")]),
            Err(EvalError::SelfReconstructionRow("EOG horizontal".into()))
        );
        assert!(matches!(
            MseTable::new(vec![row("EOG", "EMG"), row("EOG", "EMG")]),
            Err(EvalError::DuplicateRow { .. })
        ));
    }

    #[test]
    fn canonical_row_order_and_labels() {
        let row = |i: &str, t: &str| MseRow {
            input: i.into(),
            target: t.into(),
            cells: [None; 5],
        };
        let t = MseTable::new(vec![
            row("EOG horizontal", "EEG Pz-Oz"),
            row("EEG Fpz-Cz", "EMG submental"),
            row("EOG horizontal", "EEG Fpz-Cz"),
            row("EEG Fpz-Cz", "EEG Pz-Oz"),
            row("EEG Fpz-Cz", "EOG horizontal"),
            row("EOG horizontal", "EMG submental"),
        ])
        .unwrap();
        let labels: Vec<(String, String)> = t
            .rows()
            .iter()
            .map(|r| (display_label(&r.input), display_label(&r.target)))
            .collect();
        let expect = [
            ("EEG (FPz-Cz)", "EOG"),
            ("EEG (FPz-Cz)", "EMG"),
            ("EEG (FPz-Cz)", "EEG (Pz-Oz)"),
            ("EOG", "EEG (FPz-Cz)"),
            ("EOG", "EMG"),
            ("EOG", "EEG (Pz-Oz)"),
        ];
        for (got, want) in labels.iter().zip(expect) {
            assert_eq!((got.0.as_str(), got.1.as_str()), want);
        }
        assert_eq!(t.inputs(), ["EEG Fpz-Cz", "EOG horizontal"]);
    }

    #[test]
    fn text_rendering() {
        let mut cells = [None; 5];
        cells[0] = Some(StageCell {
            mean_mse: 2.149,
            epoch_count: 3,
        });
        cells[4] = Some(StageCell {
            mean_mse: 11.06,
            epoch_count: 1,
        });
        let t = MseTable::new(vec![
            MseRow {
                input: "EEG Fpz-Cz".into(),
                target: "EEG Pz-Oz".into(),
                cells,
            },
            MseRow {
                input: "EEG Fpz-Cz".into(),
                target: "EOG horizontal".into(),
                cells: [None; 5],
            },
        ])
        .unwrap();
        let text = format!("{t}");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let cols = |l: &str| {
            l.split('|')
                .map(|c| c.trim().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(
            cols(lines[0]),
            ["Input", "Reconstruction", "Wake", "N1", "N2", "N3", "REM"]
        );
        assert!(lines[1].chars().all(|c| c == '-' || c == '+'));
        assert_eq!(
            cols(lines[2]),
            ["EEG (FPz-Cz)", "EOG", "-", "-", "-", "-", "-"]
        );
        assert_eq!(
            cols(lines[3]),
            ["", "EEG (Pz-Oz)", "2.1", "-", "-", "-", "11.1"]
        );
        // Columns line up.
        assert_eq!(lines[0].find("Wake"), lines[3].find("2.1").map(|i| i - 1));
    }
}
