//! A preprocessed dataset on disk: `manifest.json` plus the epoch cache
//! `epochs.psgepo` in one directory.

use std::path::Path;

use psgmae_core::pipeline::{DatasetManifest, EpochRecord, Split};

use crate::cache::{read_epochs, write_epochs, CacheError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_FILE: &str = "epochs.psgepo";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("{path}: {message}")]
    Manifest { path: String, message: String },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Epochs in cache order (subject by subject, then by epoch index).
    pub epochs: Vec<EpochRecord>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let epochs = read_epochs(&dir.join(CACHE_FILE))?;
        Ok(Self { manifest, epochs })
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| DatasetError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(MANIFEST_FILE);
        let mut text =
            serde_json::to_string_pretty(&self.manifest).expect("manifest is plain data");
        text.push('\n');
        std::fs::write(&path, text).map_err(io(&path))?;
        write_epochs(&dir.join(CACHE_FILE), &self.epochs)?;
        Ok(())
    }

    /// Epochs of subjects assigned to `split`, in cache order.
    pub fn split(&self, split: Split) -> Vec<EpochRecord> {
        self.epochs
            .iter()
            .filter(|e| self.manifest.split_of(&e.subject_id) == Some(split))
            .cloned()
            .collect()
    }
}
