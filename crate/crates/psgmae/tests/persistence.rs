mod common;

use proptest::prelude::*;
use psgmae::cache::{decode_epochs, encode_epochs, read_epochs, write_epochs, CacheError};
use psgmae::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use psgmae::config::{config_from_toml, config_to_toml, metrics_line};
use psgmae_core::trainer::{EpochMetrics, TrainConfig, TrainState, Trainer};

fn trained_state() -> (TrainConfig, TrainState) {
    let epochs = common::synth_epochs(3, 2, 180.0);
    let config = common::small_config(2);
    let (train, val) = epochs.split_at(8);
    let mut t = Trainer::new(config.clone(), train, val).unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    (config, t.into_state())
}

#[test]
fn cache_round_trips_exactly() {
    let epochs = common::synth_epochs(1, 2, 120.0);
    assert!(epochs.len() >= 6);
    let bytes = encode_epochs(&epochs).unwrap();
    assert_eq!(&bytes[..8], b"PSGEPO01");
    assert_eq!(decode_epochs(&bytes).unwrap(), epochs);
    assert_eq!(encode_epochs(&epochs).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.psgepo");
    write_epochs(&path, &epochs).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(read_epochs(&path).unwrap(), epochs);
}

#[test]
fn truncated_or_foreign_caches_are_errors() {
    let epochs = common::synth_epochs(1, 1, 60.0);
    let bytes = encode_epochs(&epochs).unwrap();
    assert!(matches!(
        decode_epochs(b"PSGMAE01"),
        Err(CacheError::BadMagic)
    ));
    assert!(decode_epochs(&bytes[..8]).unwrap().is_empty());
    for cut in (0..300).chain((300..bytes.len()).step_by(997)) {
        assert!(
            decode_epochs(&bytes[..cut]).is_err() || cut == 8,
            "prefix {cut}"
        );
    }
}

#[test]
fn wrong_sample_count_is_rejected_on_write() {
    let mut epochs = common::synth_epochs(1, 1, 30.0);
    epochs[0].targets[1].samples.pop();
    assert!(matches!(
        encode_epochs(&epochs),
        Err(CacheError::WrongLength(0, 2999))
    ));
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let (config, state) = trained_state();
    assert!(state.adam.step > 0);
    let bytes = save_checkpoint(&config, &state).unwrap();
    assert_eq!(&bytes[..8], b"PSGMAE01");
    let (config2, state2) = load_checkpoint(&bytes).unwrap();
    assert_eq!(config2, config);
    assert_eq!(state2, state);
    for (a, b) in state.model.params.iter().zip(state2.model.params.iter()) {
        assert_eq!(a.shape(), b.shape());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(save_checkpoint(&config2, &state2).unwrap(), bytes);
}

#[test]
fn truncated_checkpoints_never_crash() {
    let (config, state) = trained_state();
    let bytes = save_checkpoint(&config, &state).unwrap();
    for cut in (0..2000).chain((2000..bytes.len()).step_by(401)) {
        match load_checkpoint(&bytes[..cut]) {
            Err(CheckpointError::BadMagic) | Err(CheckpointError::ShapeMismatchOnLoad(_)) => {}
            other => panic!("prefix {cut}: {:?}", other.map(|_| ())),
        }
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(
        load_checkpoint(&extra),
        Err(CheckpointError::ShapeMismatchOnLoad(_))
    ));
    assert!(matches!(
        load_checkpoint(b"PSGEPO01rest"),
        Err(CheckpointError::BadMagic)
    ));
}

#[test]
fn non_finite_state_is_refused() {
    let (config, mut state) = trained_state();
    state.model.params.iter_mut().nth(3).unwrap().data_mut()[0] = f32::NAN;
    assert!(matches!(
        save_checkpoint(&config, &state),
        Err(CheckpointError::NonFinite)
    ));

    let (config, mut state) = trained_state();
    state.adam.second_moment[0][0] = f32::INFINITY;
    assert!(matches!(
        save_checkpoint(&config, &state),
        Err(CheckpointError::NonFinite)
    ));
}

#[test]
fn checkpoint_config_must_match_state() {
    let (mut config, state) = trained_state();
    config.mae.embed_dim = 32;
    assert!(matches!(
        save_checkpoint(&config, &state),
        Err(CheckpointError::BadConfig(_))
    ));
}

#[test]
fn config_toml_round_trip_and_defaults() {
    let config = common::small_config(7);
    let text = config_to_toml(&config).unwrap();
    assert_eq!(config_from_toml(&text).unwrap(), config);

    let partial = config_from_toml(
        "input_channel = \"EEG Fpz-Cz\"\n[mae]\ntarget_channels = [\"EOG horizontal\"]\n",
    )
    .unwrap();
    assert_eq!(partial.batch_size, 64);
    assert_eq!(partial.patience, 10);
    assert_eq!(partial.optimizer.lr, 1e-3);
    assert_eq!(partial.mae.patch_size * partial.mae.seq_len, 3000);
    partial.validate().unwrap();
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(config_from_toml("batch_sise = 3\n").is_err());
    assert!(config_from_toml("[mae]\nembed = 3\n").is_err());
    assert!(config_from_toml("[optimizer]\nmomentum = 0.9\n").is_err());
    assert!(config_from_toml("batch_size = \"big\"\n").is_err());
}

#[test]
fn metrics_lines_are_json() {
    let m = EpochMetrics {
        epoch: 3,
        train_loss: 0.25,
        val_loss: 0.5,
        val_mse: vec![("EOG horizontal".into(), 0.125)],
    };
    let line = metrics_line(&m);
    assert_eq!(
        line,
        r#"{"epoch":3,"train_loss":0.25,"val_loss":0.5,"val_mse":[["EOG horizontal",0.125]]}"#
    );
    assert_eq!(serde_json::from_str::<EpochMetrics>(&line).unwrap(), m);
    let tricky = EpochMetrics {
        val_mse: vec![("EMG submental".into(), 2.0091163101288934)],
        ..m
    };
    assert_eq!(
        serde_json::from_str::<EpochMetrics>(&metrics_line(&tricky)).unwrap(),
        tricky
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_values_survive_the_log_bit_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let m = EpochMetrics { epoch: 1, train_loss: v, val_loss: -v, val_mse: vec![("x".into(), v / 3.0)] };
        let back: EpochMetrics = serde_json::from_str(&metrics_line(&m)).unwrap();
        prop_assert_eq!(back.train_loss.to_bits(), v.to_bits());
        prop_assert_eq!(back.val_mse[0].1.to_bits(), (v / 3.0).to_bits());
    }

    #[test]
    fn corrupted_cache_bytes_never_panic(pos in 0usize..24_200, byte in any::<u8>()) {
        let epochs = common::synth_epochs(1, 1, 60.0);
        let mut bytes = encode_epochs(&epochs).unwrap();
        let pos = pos % bytes.len();
        bytes[pos] = byte;
        let _ = decode_epochs(&bytes);
    }
}

#[test]
fn readme_config_example_parses() {
    let readme =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme
        .split("```toml\n")
        .nth(1)
        .unwrap()
        .split("```")
        .next()
        .unwrap();
    let config = config_from_toml(block).unwrap();
    let expected = TrainConfig {
        input_channel: "EEG Fpz-Cz".into(),
        mae: psgmae_core::mae::MaeConfig {
            target_channels: common::targets(),
            ..Default::default()
        },
        ..Default::default()
    };
    assert_eq!(config, expected);
}
