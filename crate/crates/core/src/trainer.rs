//! Deterministic training loop.
//!
//! Randomness comes from three ChaCha8 streams of the configured seed:
//! stream 0 initializes parameters, stream 1 shuffles the training set each
//! epoch, stream 2 draws masks. Only the word positions of streams 1 and 2
//! need to be stored to resume exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{calibrate, mse};
use crate::mae::{cosine_loss, MaeConfig, MaeError, MaeModel, MaskPlan};
use crate::numcore::{AdamConfig, AdamState, NumError, Tensor};
use crate::pipeline::{EpochRecord, EPOCH_SAMPLES};

const SHUFFLE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mae: MaeConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub input_channel: String,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mae: MaeConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 100,
            seed: 0,
            input_channel: String::new(),
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "max_epochs must be at least 1".into(),
            ));
        }
        if self.input_channel.trim().is_empty() {
            return Err(TrainError::InvalidConfig("input_channel is empty".into()));
        }
        if let Some(t) = self
            .mae
            .target_channels
            .iter()
            .find(|t| t.trim().eq_ignore_ascii_case(self.input_channel.trim()))
        {
            return Err(TrainError::InvalidConfig(format!(
                "input channel `{t}` is also a target"
            )));
        }
        self.mae.validate_for_epochs(EPOCH_SAMPLES)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("the {0} split has no epochs")]
    EmptySplit(&'static str),
    #[error("epoch {epoch} has input channel `{found}`, expected `{expected}`")]
    InputChannelMismatch {
        epoch: usize,
        expected: String,
        found: String,
    },
    #[error("non-finite loss or gradient in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("resumed state does not match the configuration: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Model(#[from] MaeError),
}

impl From<NumError> for TrainError {
    fn from(e: NumError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Positions in the shuffle and mask streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RngState {
    pub shuffle_word_pos: u128,
    pub mask_word_pos: u128,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: MaeModel<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub best_val_loss: Option<f64>,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Result<Self, TrainError> {
        let model = MaeModel::init(config.mae.clone(), config.seed)?;
        let adam = AdamState::new(config.optimizer, model.params.iter());
        Ok(Self {
            model,
            adam,
            epoch: 0,
            rng: RngState::default(),
            best_val_loss: None,
            epochs_since_best: 0,
        })
    }

    /// No parameter or optimizer moment is NaN or infinite.
    pub fn all_finite(&self) -> bool {
        self.model.params.iter().all(|t| t.all_finite())
            && self
                .adam
                .first_moment
                .iter()
                .chain(&self.adam.second_moment)
                .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean normalized MSE on the validation split, per target in config
    /// order.
    pub val_mse: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub metrics: EpochMetrics,
    /// This epoch set a new best validation loss.
    pub improved: bool,
}

/// Steps through training one epoch at a time.
#[derive(Debug)]
pub struct Trainer<'a> {
    config: TrainConfig,
    train: Vec<&'a EpochRecord>,
    val: Vec<&'a EpochRecord>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        train: &'a [EpochRecord],
        val: &'a [EpochRecord],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let state = TrainState::fresh(&config)?;
        Self::resume(config, state, train, val)
    }

    /// Continues from a saved state. The state's model configuration must
    /// equal `config.mae`.
    pub fn resume(
        config: TrainConfig,
        state: TrainState,
        train: &'a [EpochRecord],
        val: &'a [EpochRecord],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if state.model.config != config.mae {
            return Err(TrainError::StateMismatch(
                "model configuration differs".into(),
            ));
        }
        if state.adam.config != config.optimizer {
            return Err(TrainError::StateMismatch(
                "optimizer configuration differs".into(),
            ));
        }
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("val"));
        }
        for (i, e) in train.iter().chain(val).enumerate() {
            if !e
                .input
                .name
                .trim()
                .eq_ignore_ascii_case(config.input_channel.trim())
            {
                return Err(TrainError::InputChannelMismatch {
                    epoch: i,
                    expected: config.input_channel.clone(),
                    found: e.input.name.clone(),
                });
            }
        }
        Ok(Self {
            config,
            train: train.iter().collect(),
            val: val.iter().collect(),
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// `max_epochs` reached or validation loss stalled for `patience` epochs.
    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.max_epochs
            || (self.state.epoch > 0 && self.state.epochs_since_best >= self.config.patience)
    }

    fn stream(&self, stream: u64, word_pos: u128) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        rng
    }

    /// Runs one epoch: shuffled mini-batches with one Adam step each, then
    /// validation.
    pub fn run_epoch(&mut self) -> Result<EpochReport, TrainError> {
        let epoch = self.state.epoch + 1;
        let mut shuffle = self.stream(SHUFFLE_STREAM, self.state.rng.shuffle_word_pos);
        let mut masks = self.stream(MASK_STREAM, self.state.rng.mask_word_pos);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut shuffle);

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&EpochRecord> = chunk.iter().map(|&i| self.train[i]).collect();
            let (loss, grads) = self.state.model.batch_loss_and_grads(&batch, &mut masks)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            self.state
                .adam
                .step(self.state.model.params.iter_mut(), &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / self.train.len() as f64;
        let (val_loss, val_mse) = validate(&self.state.model, &self.val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }

        let improved = self.state.best_val_loss.is_none_or(|best| val_loss < best);
        if improved {
            self.state.best_val_loss = Some(val_loss);
            self.state.epochs_since_best = 0;
        } else {
            self.state.epochs_since_best += 1;
        }
        self.state.epoch = epoch;
        self.state.rng = RngState {
            shuffle_word_pos: shuffle.get_word_pos(),
            mask_word_pos: masks.get_word_pos(),
        };
        Ok(EpochReport {
            metrics: EpochMetrics {
                epoch,
                train_loss,
                val_loss,
                val_mse,
            },
            improved,
        })
    }
}

/// Validation cosine loss and per-target normalized MSE, with every token
/// visible.
pub fn validate(
    model: &MaeModel<f32>,
    records: &[&EpochRecord],
) -> Result<(f64, Vec<(String, f64)>), TrainError> {
    let config = &model.config;
    let plan = MaskPlan::none(config.seq_len);
    let views = model.batch_views(records)?;
    let mut loss_sum = 0.0;
    let mut mse_sum = alloc::vec![0.0; config.num_targets()];
    for (input, targets) in &views {
        let raw = model.reconstruct(input, &plan)?;
        let n = config.epoch_len();
        for (k, t) in targets.iter().enumerate() {
            let out = &raw.data()[k * n..(k + 1) * n];
            mse_sum[k] += mse(&calibrate(out), t).expect("equal lengths by construction");
        }
        let target = Tensor::new(
            raw.shape(),
            targets.iter().flat_map(|t| t.iter().copied()).collect(),
        )?;
        loss_sum += cosine_loss(&raw, &target)?;
    }
    let n = views.len() as f64;
    let per_target = config
        .target_channels
        .iter()
        .cloned()
        .zip(mse_sum.into_iter().map(|s| s / n))
        .collect();
    Ok((loss_sum / n, per_target))
}

/// Trains until [`Trainer::is_done`] and returns the final state, the model
/// with the best validation loss, and the metrics log.
pub fn train_to_completion(
    config: TrainConfig,
    train: &[EpochRecord],
    val: &[EpochRecord],
) -> Result<(TrainState, MaeModel<f32>, Vec<EpochMetrics>), TrainError> {
    let mut trainer = Trainer::new(config, train, val)?;
    let mut best = trainer.state().model.clone();
    let mut log = Vec::new();
    while !trainer.is_done() {
        let report = trainer.run_epoch()?;
        if report.improved {
            best = trainer.state().model.clone();
        }
        log.push(report.metrics);
    }
    Ok((trainer.into_state(), best, log))
}
