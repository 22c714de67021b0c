#![allow(dead_code)]

pub mod edfgen;

use std::path::Path;

use psgmae::workflow::{self, synth_subject_id, PreprocessArgs};
use psgmae_core::mae::MaeConfig;
use psgmae_core::pipeline::{segment_epochs, EpochRecord, SegmentOptions, SplitFractions};
use psgmae_core::synth::{generate, SynthSpec, EEG2_LABEL, EMG_LABEL, EOG_LABEL, INPUT_LABEL};
use psgmae_core::trainer::TrainConfig;

pub fn targets() -> Vec<String> {
    vec![
        EOG_LABEL.to_string(),
        EMG_LABEL.to_string(),
        EEG2_LABEL.to_string(),
    ]
}

/// Epochs of `subjects` synthetic subjects, segmented in memory.
pub fn synth_epochs(seed: u64, subjects: u64, duration_s: f64) -> Vec<EpochRecord> {
    let mut out = Vec::new();
    for s in 0..subjects {
        let spec = SynthSpec {
            seed,
            subject: s,
            duration_s,
            ..Default::default()
        };
        let (rec, ann) = generate(&spec).unwrap();
        let id = synth_subject_id(s as usize);
        out.extend(
            segment_epochs(
                &id,
                &rec,
                &ann,
                INPUT_LABEL,
                &targets(),
                &SegmentOptions::default(),
            )
            .unwrap(),
        );
    }
    out
}

/// A model small enough to train a few epochs in well under a second.
pub fn small_config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        mae: MaeConfig {
            embed_dim: 16,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            mlp_ratio: 2,
            target_channels: targets(),
            ..Default::default()
        },
        batch_size: 8,
        max_epochs,
        input_channel: INPUT_LABEL.to_string(),
        ..Default::default()
    }
}

/// Synthesizes `subjects` recordings into `dir/raw` and preprocesses them
/// into `dir/data`.
pub fn synth_dataset(dir: &Path, seed: u64, subjects: usize, duration_s: f64) {
    let raw = dir.join("raw");
    workflow::synth(&raw, seed, duration_s, 5.0, subjects).unwrap();
    let psg: Vec<_> = (0..subjects)
        .map(|i| raw.join(format!("{}-PSG.edf", synth_subject_id(i))))
        .collect();
    let hyp: Vec<_> = (0..subjects)
        .map(|i| raw.join(format!("{}-Hypnogram.edf", synth_subject_id(i))))
        .collect();
    workflow::preprocess(&PreprocessArgs {
        psg: &psg,
        hypnogram: &hyp,
        input_channel: INPUT_LABEL,
        targets: &targets(),
        out: &dir.join("data"),
        seed,
        split: SplitFractions(0.7, 0.1, 0.2),
    })
    .unwrap();
}
