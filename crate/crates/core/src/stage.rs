//! Sleep stages shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five scored stages, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Wake = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

pub const NUM_STAGES: usize = 5;

impl Stage {
    pub const ALL: [Stage; NUM_STAGES] = [Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    /// Short code used in sidecar files.
    pub fn code(self) -> &'static str {
        match self {
            Stage::Wake => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "R",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "W" => Ok(Stage::Wake),
            "N1" => Ok(Stage::N1),
            "N2" => Ok(Stage::N2),
            "N3" => Ok(Stage::N3),
            "R" => Ok(Stage::Rem),
            other => Err(format!("unknown stage code `{other}`")),
        }
    }
}

/// A per-epoch label; `None` marks an excluded (artifact or unknown) epoch.
pub type Label = Option<Stage>;

/// Sidecar code for a label, `EXC` for excluded epochs.
pub fn label_code(label: Label) -> &'static str {
    label.map_or("EXC", Stage::code)
}

pub fn parse_label_code(s: &str) -> Result<Label, String> {
    if s == "EXC" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}
