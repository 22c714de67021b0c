//! The command-line workflow as library calls. Each function does the work
//! of one subcommand and returns the text it prints on stdout.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use psgmae_core::eval::{
    aggregate_by_stage, reconstruct_epoch, MseTable, MseUnits, Reconstruction,
};
use psgmae_core::mae::{tiny_grad_check, MaeModel};
use psgmae_core::pipeline::{
    segment_epochs, split_subjects, ChannelEpoch, DatasetManifest, EpochRecord, SegmentOptions,
    SleepStage, Split, SplitFractions, StageCounts, SubjectEntry,
};
use psgmae_core::recording::EdfRecording;
use psgmae_core::synth::{generate, SynthSpec};
use psgmae_core::trainer::{TrainConfig, TrainState, Trainer};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{append_metrics, config_from_toml, read_metrics};
use crate::dataset::Dataset;
use crate::edf::{hypnogram_recording, read_edf, write_edf_file};
use crate::report::{reconstruction_csv, table_to_csv, write_text};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TABLE_CSV: &str = "mse_table.csv";
pub const TABLE_TEXT: &str = "mse_table.txt";

/// Thresholds of the tiny gradient check, per precision.
pub const GRADCHECK_F64_LIMIT: f64 = 1e-5;
pub const GRADCHECK_F32_LIMIT: f64 = 1e-3;

/// Failure of a check command (exit code 1), as opposed to a usage or data
/// error (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

pub fn inspect(path: &Path) -> Result<String> {
    let rec = read_edf(path)?;
    Ok(describe(&rec))
}

fn describe(rec: &EdfRecording) -> String {
    let s = rec.start;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "format: {}",
        if rec.is_edf_plus() { "EDF+C" } else { "EDF" }
    );
    let _ = writeln!(out, "patient: {}", rec.patient_id);
    let _ = writeln!(out, "recording: {}", rec.recording_id);
    let _ = writeln!(
        out,
        "start: {:04}-{:02}-{:02} {:02}:{:02}:{:02}",
        s.year, s.month, s.day, s.hour, s.minute, s.second
    );
    let _ = writeln!(
        out,
        "records: {} x {} s ({} s)",
        rec.num_records,
        rec.record_duration_s,
        rec.duration_s()
    );
    let _ = writeln!(out, "signals: {}", rec.signals.len());
    for (spec, samples) in rec.signals.iter().zip(&rec.samples) {
        let _ = writeln!(
            out,
            "  {:<16} {:>8} Hz  {:>9} samples  {} s  [{} .. {}] {}",
            spec.label,
            spec.sample_rate(rec.record_duration_s),
            samples.len(),
            rec.duration_s(),
            spec.physical_min,
            spec.physical_max,
            spec.physical_dimension
        );
    }
    let _ = writeln!(out, "annotations: {}", rec.annotations.len());
    out
}

/// File stem for subject `index` of a synthetic set.
pub fn synth_subject_id(index: usize) -> String {
    format!("SN{index:03}")
}

/// Writes `subjects` synthetic recordings with their hypnograms to `out` as
/// `SN000-PSG.edf`, `SN000-Hypnogram.edf`, ...
pub fn synth(
    out: &Path,
    seed: u64,
    duration_s: f64,
    noise_std: f64,
    subjects: usize,
) -> Result<String> {
    if subjects == 0 {
        bail!("--subjects must be at least 1");
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut summary = String::new();
    for i in 0..subjects {
        let spec = SynthSpec {
            seed,
            subject: i as u64,
            duration_s,
            noise_std,
            ..SynthSpec::default()
        };
        let (rec, annotations) = generate(&spec)?;
        let hyp = hypnogram_recording(rec.start, &rec.patient_id, annotations)?;
        let id = synth_subject_id(i);
        write_edf_file(&out.join(format!("{id}-PSG.edf")), &rec)?;
        write_edf_file(&out.join(format!("{id}-Hypnogram.edf")), &hyp)?;
        let _ = writeln!(
            summary,
            "{id}: {} epochs, {} signals",
            spec.num_epochs(),
            rec.signals.len()
        );
    }
    Ok(summary)
}

/// Subject id of a PSG file: its stem without a trailing `-PSG`.
pub fn subject_id_of(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.len().checked_sub(4) {
        Some(cut) if stem[cut..].eq_ignore_ascii_case("-PSG") => stem[..cut].to_string(),
        _ => stem,
    }
}

pub struct PreprocessArgs<'a> {
    pub psg: &'a [PathBuf],
    pub hypnogram: &'a [PathBuf],
    pub input_channel: &'a str,
    pub targets: &'a [String],
    pub out: &'a Path,
    pub seed: u64,
    pub split: SplitFractions,
}

/// Segments every (PSG, hypnogram) pair and writes the dataset. With fewer
/// than three subjects no split is assigned.
pub fn preprocess(args: &PreprocessArgs) -> Result<String> {
    if args.psg.len() != args.hypnogram.len() {
        bail!(
            "got {} --psg files but {} --hypnogram files",
            args.psg.len(),
            args.hypnogram.len()
        );
    }
    if args.psg.is_empty() {
        bail!("no --psg files given");
    }
    let options = SegmentOptions::default();
    let mut manifest = DatasetManifest {
        input_channel: args.input_channel.to_string(),
        target_channels: args.targets.to_vec(),
        seed: args.seed,
        ..Default::default()
    };
    let mut epochs = Vec::new();
    for (psg, hyp) in args.psg.iter().zip(args.hypnogram) {
        let id = subject_id_of(psg);
        if manifest.subjects.iter().any(|s| s.subject_id == id) {
            bail!("subject `{id}` appears twice");
        }
        let rec = read_edf(psg)?;
        let hyp_rec = read_edf(hyp)?;
        let found = segment_epochs(
            &id,
            &rec,
            &hyp_rec.annotations,
            args.input_channel,
            args.targets,
            &options,
        )
        .with_context(|| format!("cannot segment {}", psg.display()))?;
        manifest.subjects.push(SubjectEntry {
            subject_id: id,
            files: vec![psg.display().to_string(), hyp.display().to_string()],
            epoch_counts: StageCounts::from_epochs(&found),
        });
        epochs.extend(found);
    }
    if manifest.subjects.len() >= 3 {
        manifest = split_subjects(&manifest, args.seed, args.split)?;
    } else {
        eprintln!(
            "warning: {} subject(s); at least 3 are needed to assign train/val/test splits",
            manifest.subjects.len()
        );
    }
    let counts = StageCounts::from_epochs(&epochs);
    let dataset = Dataset { manifest, epochs };
    dataset.save(args.out)?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} epochs from {} subject(s)",
        counts.total(),
        dataset.manifest.subjects.len()
    );
    for s in SleepStage::ALL {
        let _ = writeln!(out, "  {:<4} {}", s.name(), counts.get(s));
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = dataset.manifest.subjects_in(split).count();
        if n > 0 {
            let e = dataset.split(split).len();
            let _ = writeln!(out, "{split:?}: {n} subject(s), {e} epochs");
        }
    }
    Ok(out)
}

/// Rebuilds `record` with `input` as the input channel and `targets` as the
/// targets, picking channels by name from everything the record holds.
pub fn select_channels(
    record: &EpochRecord,
    input: &str,
    targets: &[String],
) -> Result<EpochRecord> {
    let all: Vec<&ChannelEpoch> = std::iter::once(&record.input)
        .chain(&record.targets)
        .collect();
    let find = |name: &str| -> Result<ChannelEpoch> {
        all.iter()
            .find(|c| c.name.trim().eq_ignore_ascii_case(name.trim()))
            .map(|c| (*c).clone())
            .ok_or_else(|| anyhow!("channel `{name}` is not in the dataset"))
    };
    Ok(EpochRecord {
        subject_id: record.subject_id.clone(),
        epoch_index: record.epoch_index,
        stage: record.stage,
        input: find(input)?,
        targets: targets.iter().map(|t| find(t)).collect::<Result<_>>()?,
    })
}

fn split_for(dataset: &Dataset, split: Split, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    dataset
        .split(split)
        .iter()
        .map(|r| select_channels(r, &config.input_channel, &config.mae.target_channels))
        .collect()
}

/// Reads a configuration file, filling an empty input channel or target
/// list from the dataset manifest.
pub fn resolve_config(path: &Path, manifest: &DatasetManifest) -> Result<TrainConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut config =
        config_from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if config.input_channel.trim().is_empty() {
        config.input_channel = manifest.input_channel.clone();
    }
    if config.mae.target_channels.is_empty() {
        config.mae.target_channels = manifest.target_channels.clone();
    }
    config.validate()?;
    Ok(config)
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub resume: Option<&'a Path>,
}

/// Trains until done, writing `metrics.jsonl`, `last.ckpt` after every
/// epoch and `best.ckpt` whenever validation loss improves.
///
/// On resume the metrics log in `out` is cut back to the checkpoint's epoch
/// before new lines are appended.
/// `progress` receives one summary line per finished epoch.
pub fn train(args: &TrainArgs, progress: &mut dyn FnMut(&str)) -> Result<String> {
    let dataset = Dataset::load(args.data)?;
    let config = resolve_config(args.config, &dataset.manifest)?;
    let train_set = split_for(&dataset, Split::Train, &config)?;
    let val_set = split_for(&dataset, Split::Val, &config)?;
    std::fs::create_dir_all(args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let metrics_path = args.out.join(METRICS_FILE);

    let mut previous = Vec::new();
    let mut trainer = match args.resume {
        Some(path) => {
            let (_, state) = read_checkpoint(path)?;
            if metrics_path.exists() {
                previous = read_metrics(&metrics_path)?;
                previous.truncate(state.epoch);
            }
            Trainer::resume(config.clone(), state, &train_set, &val_set)?
        }
        None => Trainer::new(config.clone(), &train_set, &val_set)?,
    };
    let mut log = BufWriter::new(
        File::create(&metrics_path)
            .with_context(|| format!("cannot create {}", metrics_path.display()))?,
    );
    for m in &previous {
        append_metrics(&mut log, m)?;
    }
    log.flush()?;

    let mut out = String::new();
    let best_path = args.out.join(BEST_CHECKPOINT);
    if args.resume.is_none() || !best_path.exists() {
        write_checkpoint(&best_path, &config, trainer.state())?;
    }
    while !trainer.is_done() {
        let report = trainer.run_epoch()?;
        append_metrics(&mut log, &report.metrics)?;
        log.flush()?;
        write_checkpoint(&args.out.join(LAST_CHECKPOINT), &config, trainer.state())?;
        if report.improved {
            write_checkpoint(&best_path, &config, trainer.state())?;
        }
        let m = &report.metrics;
        let mse: Vec<String> = m
            .val_mse
            .iter()
            .map(|(n, v)| format!("{n}={v:.4}"))
            .collect();
        let line = format!(
            "epoch {:>3}  train {:.4}  val {:.4}  mse {}{}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            mse.join(" "),
            if report.improved { "  *" } else { "" }
        );
        progress(&line);
    }
    let state = trainer.state();
    if !args.out.join(LAST_CHECKPOINT).exists() {
        write_checkpoint(&args.out.join(LAST_CHECKPOINT), &config, state)?;
    }
    let _ = writeln!(
        out,
        "stopped after {} epochs; best validation loss {}",
        state.epoch,
        state
            .best_val_loss
            .map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(out)
}

/// Loads the model stored in a checkpoint together with its configuration.
pub fn load_model(path: &Path) -> Result<(TrainConfig, MaeModel<f32>)> {
    let (config, state): (TrainConfig, TrainState) = read_checkpoint(path)?;
    Ok((config, state.model))
}

/// Test-split MSE table of one model.
pub fn evaluate_model(
    config: &TrainConfig,
    model: &MaeModel<f32>,
    dataset: &Dataset,
    units: MseUnits,
) -> Result<MseTable> {
    let test = split_for(dataset, Split::Test, config)?;
    if test.is_empty() {
        bail!("the test split has no epochs");
    }
    let recs: Vec<Vec<Reconstruction>> = test
        .iter()
        .map(|r| reconstruct_epoch(model, r))
        .collect::<Result<_, _>>()?;
    Ok(aggregate_by_stage(
        test.iter().zip(recs.iter().map(Vec::as_slice)),
        units,
    )?)
}

pub struct EvalArgs<'a> {
    pub checkpoints: &'a [PathBuf],
    pub data: &'a Path,
    pub out: &'a Path,
    pub physical: bool,
}

/// Evaluates every checkpoint on the test split, merges the tables and
/// writes `mse_table.csv` and `mse_table.txt`.
pub fn eval(args: &EvalArgs) -> Result<String> {
    if args.checkpoints.is_empty() {
        bail!("at least one --checkpoint is required");
    }
    let dataset = Dataset::load(args.data)?;
    let units = if args.physical {
        MseUnits::Physical
    } else {
        MseUnits::Normalized
    };
    let mut table = MseTable::default();
    for path in args.checkpoints {
        let (config, model) = load_model(path)?;
        let t = evaluate_model(&config, &model, &dataset, units)?;
        table = table.merge(t)?;
    }
    std::fs::create_dir_all(args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let text = table.to_string();
    write_text(&args.out.join(TABLE_CSV), &table_to_csv(&table)?)?;
    write_text(&args.out.join(TABLE_TEXT), &text)?;
    Ok(text)
}

pub struct ReconstructArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub epoch_index: usize,
    pub subject: Option<&'a str>,
    pub out: &'a Path,
}

/// Exports one epoch and its reconstruction. Without a subject,
/// `epoch_index` counts epochs in cache order; with one, it is that
/// subject's epoch number.
pub fn reconstruct(args: &ReconstructArgs) -> Result<String> {
    let dataset = Dataset::load(args.data)?;
    let (config, model) = load_model(args.checkpoint)?;
    let record = match args.subject {
        Some(id) => dataset
            .epochs
            .iter()
            .find(|e| e.subject_id == id && e.epoch_index == args.epoch_index)
            .ok_or_else(|| anyhow!("subject `{id}` has no epoch {}", args.epoch_index))?,
        None => dataset.epochs.get(args.epoch_index).ok_or_else(|| {
            anyhow!(
                "epoch index {} out of range ({} epochs)",
                args.epoch_index,
                dataset.epochs.len()
            )
        })?,
    };
    let record = select_channels(record, &config.input_channel, &config.mae.target_channels)?;
    let recs = reconstruct_epoch(&model, &record)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    write_text(args.out, &reconstruction_csv(&record, &recs)?)?;
    Ok(format!(
        "subject {} epoch {} ({}): {} target(s) written to {}\n",
        record.subject_id,
        record.epoch_index,
        record.stage,
        record.targets.len(),
        args.out.display()
    ))
}

/// Runs the tiny gradient check at both precisions.
pub fn gradcheck(seed: u64) -> Result<String> {
    let f64_report = tiny_grad_check::<f64>(seed)?;
    let f32_report = tiny_grad_check::<f32>(seed)?;
    let out = format!(
        "f64 max relative error {:.3e} over {} coordinates (limit {:.0e})\n\
         f32 max relative error {:.3e} over {} coordinates (limit {:.0e})\n",
        f64_report.max_relative_error,
        f64_report.coordinates,
        GRADCHECK_F64_LIMIT,
        f32_report.max_relative_error,
        f32_report.coordinates,
        GRADCHECK_F32_LIMIT
    );
    if f64_report.max_relative_error < GRADCHECK_F64_LIMIT
        && f32_report.max_relative_error < GRADCHECK_F32_LIMIT
    {
        Ok(out)
    } else {
        Err(CheckFailed(out).into())
    }
}
