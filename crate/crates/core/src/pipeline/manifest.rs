use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, PipelineError, SleepStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub wake: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub rem: usize,
}

impl StageCounts {
    pub fn from_epochs<'a>(epochs: impl IntoIterator<Item = &'a EpochRecord>) -> Self {
        let mut c = Self::default();
        for e in epochs {
            *c.get_mut(e.stage) += 1;
        }
        c
    }

    pub fn get(&self, stage: SleepStage) -> usize {
        match stage {
            SleepStage::Wake => self.wake,
            SleepStage::N1 => self.n1,
            SleepStage::N2 => self.n2,
            SleepStage::N3 => self.n3,
            SleepStage::Rem => self.rem,
        }
    }

    pub fn get_mut(&mut self, stage: SleepStage) -> &mut usize {
        match stage {
            SleepStage::Wake => &mut self.wake,
            SleepStage::N1 => &mut self.n1,
            SleepStage::N2 => &mut self.n2,
            SleepStage::N3 => &mut self.n3,
            SleepStage::Rem => &mut self.rem,
        }
    }

    pub fn total(&self) -> usize {
        SleepStage::ALL.iter().map(|&s| self.get(s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub files: Vec<String>,
    pub epoch_counts: StageCounts,
}

/// Subjects in a preprocessed dataset and their split assignment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<SubjectEntry>,
    #[serde(default)]
    pub splits: BTreeMap<String, Split>,
    #[serde(default)]
    pub seed: u64,
    /// Input channel and targets of the epoch cache this manifest describes.
    #[serde(default)]
    pub input_channel: String,
    #[serde(default)]
    pub target_channels: Vec<String>,
}

impl DatasetManifest {
    pub fn split_of(&self, subject_id: &str) -> Option<Split> {
        self.splits.get(subject_id).copied()
    }

    pub fn subjects_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.subjects
            .iter()
            .map(|s| s.subject_id.as_str())
            .filter(move |id| self.split_of(id) == Some(split))
    }
}

/// `(train, val, test)` proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions(pub f64, pub f64, pub f64);

impl Default for SplitFractions {
    fn default() -> Self {
        Self(0.7, 0.1, 0.2)
    }
}

/// Assigns subjects to train/val/test.
///
/// Subjects are sorted by id, shuffled with a ChaCha8 generator seeded by
/// `seed`, then cut into contiguous blocks. Block sizes are `floor(f * n)`
/// with the remainder handed out by largest fractional part (ties go to the
/// earlier split). A split with a nonzero fraction that would end up empty
/// takes one subject from the largest split.
pub fn split_subjects(
    manifest: &DatasetManifest,
    seed: u64,
    fractions: SplitFractions,
) -> Result<DatasetManifest, PipelineError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite())
        || libm::fabs(f.iter().sum::<f64>() - 1.0) > 1e-9
    {
        return Err(PipelineError::InvalidFractions(f));
    }
    let n = manifest.subjects.len();
    if n < 3 {
        return Err(PipelineError::TooFewSubjects(n));
    }

    let counts = split_counts(n, f);
    let mut ids: Vec<&str> = manifest
        .subjects
        .iter()
        .map(|s| s.subject_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut splits = BTreeMap::new();
    let order = [Split::Train, Split::Val, Split::Test];
    let mut it = ids.into_iter();
    for (split, count) in order.into_iter().zip(counts) {
        for id in it.by_ref().take(count) {
            splits.insert(String::from(id), split);
        }
    }
    Ok(DatasetManifest {
        splits,
        seed,
        ..manifest.clone()
    })
}

fn split_counts(n: usize, f: [f64; 3]) -> [usize; 3] {
    let raw = f.map(|v| v * n as f64);
    let mut counts = raw.map(|v| libm::floor(v + 1e-9) as usize);
    let mut remaining = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = raw[a] - libm::floor(raw[a] + 1e-9);
        let fb = raw[b] - libm::floor(raw[b] + 1e-9);
        fb.partial_cmp(&fa)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    for i in 0..3 {
        if f[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3)
                .max_by_key(|&j| (counts[j], core::cmp::Reverse(j)))
                .unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}
