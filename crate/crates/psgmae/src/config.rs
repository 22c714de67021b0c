//! Training configuration files and the per-epoch metrics log.
//!
//! The configuration is TOML. Top-level keys set the loop, `[mae]` the
//! model and `[optimizer]` Adam; anything left out takes its default and
//! unknown keys are rejected:
//!
//! ```toml
//! input_channel = "EEG Fpz-Cz"
//! batch_size = 64
//! max_epochs = 100
//! seed = 0
//! patience = 10
//!
//! [mae]
//! target_channels = ["EOG horizontal", "EMG submental", "EEG Pz-Oz"]
//! patch_size = 100
//! mask_ratio = 0.5
//!
//! [optimizer]
//! lr = 0.001
//! ```
//!
//! The metrics log holds one JSON object per line, one line per epoch.

use std::io::{BufRead, Write};
use std::path::Path;

use psgmae_core::trainer::{EpochMetrics, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] psgmae_core::trainer::TrainError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn config_from_toml(text: &str) -> Result<TrainConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn config_to_toml(config: &TrainConfig) -> Result<String, toml::ser::Error> {
    toml::to_string(config)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config = config_from_toml(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn metrics_line(metrics: &EpochMetrics) -> String {
    serde_json::to_string(metrics).expect("metrics are plain data")
}

pub fn append_metrics(w: &mut impl Write, metrics: &EpochMetrics) -> std::io::Result<()> {
    writeln!(w, "{}", metrics_line(metrics))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, ConfigError> {
    let io = |source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ConfigError::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
