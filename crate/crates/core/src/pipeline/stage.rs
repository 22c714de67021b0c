use core::fmt;

use serde::{Deserialize, Serialize};

/// AASM sleep stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SleepStage {
    Wake,
    N1,
    N2,
    N3,
    Rem,
}

impl SleepStage {
    pub const ALL: [SleepStage; 5] = [
        SleepStage::Wake,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    /// Stable numeric code used in binary caches (0..=4, in `ALL` order).
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Wake => "Wake",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a Sleep-EDF (R&K) hypnogram label to an AASM stage. R&K stages 3
/// and 4 both become N3. Anything else (`Sleep stage ?`, `Movement time`,
/// free text) is excluded and returns `None`.
pub fn map_stage_label(label: &str) -> Option<SleepStage> {
    match label.trim() {
        "Sleep stage W" => Some(SleepStage::Wake),
        "Sleep stage 1" => Some(SleepStage::N1),
        "Sleep stage 2" => Some(SleepStage::N2),
        "Sleep stage 3" | "Sleep stage 4" => Some(SleepStage::N3),
        "Sleep stage R" => Some(SleepStage::Rem),
        _ => None,
    }
}
