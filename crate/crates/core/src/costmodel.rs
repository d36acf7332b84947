//! Whole-component evaluation counts per architecture and channel layout.
//!
//! With `C = n_eeg + n_eog` and encoder depth `D`:
//!
//! | arch   | steps                      |
//! |--------|----------------------------|
//! | mid    | `D*C + (D+1) + D + 1`      |
//! | early  | `4*C + 4 + D + D + 1`      |
//! | late   | `(2D+1)*C + 1 + 1`         |
//! | usleep | `(2D+1) * n_eeg * n_eog`   |
//!
//! Mid fusion runs `D` encoder blocks per channel, `D + 1` attention
//! modules, a shared decoder of `D` blocks and the classifier. Early fusion
//! counts its stem encoder once per attention head. U-Sleep evaluates one
//! full network per (EEG, EOG) pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mid,
    Early,
    Late,
    USleep,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Mid, Arch::Early, Arch::Late, Arch::USleep];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Mid => "mid",
            Arch::Early => "early",
            Arch::Late => "late",
            Arch::USleep => "usleep",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| CostError::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("at least one channel is required")]
    NoChannels,
    #[error("the pairwise protocol needs at least one EEG and one EOG channel (got {n_eeg} EEG, {n_eog} EOG)")]
    Protocol { n_eeg: u64, n_eog: u64 },
    #[error("depth must be positive")]
    Depth,
    #[error("unknown architecture {0:?} (expected mid, early, late or usleep)")]
    UnknownArch(String),
}

pub fn steps(arch: Arch, n_eeg: u64, n_eog: u64, depth: u64) -> Result<u64, CostError> {
    let c = n_eeg + n_eog;
    if c == 0 {
        return Err(CostError::NoChannels);
    }
    if depth == 0 {
        return Err(CostError::Depth);
    }
    let d = depth;
    Ok(match arch {
        Arch::Mid => d * c + (d + 1) + d + 1,
        Arch::Early => 4 * c + 4 + d + d + 1,
        Arch::Late => (2 * d + 1) * c + 1 + 1,
        Arch::USleep => {
            if n_eeg == 0 || n_eog == 0 {
                return Err(CostError::Protocol { n_eeg, n_eog });
            }
            (2 * d + 1) * n_eeg * n_eog
        }
    })
}

/// Extra steps per added channel for the fused architectures.
pub fn channel_slope(arch: Arch, depth: u64) -> Option<u64> {
    match arch {
        Arch::Mid => Some(depth),
        Arch::Early => Some(4),
        Arch::Late => Some(2 * depth + 1),
        Arch::USleep => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub arch: Arch,
    pub n_eeg: u64,
    pub n_eog: u64,
    pub steps: u64,
}

/// Rows for `n_eog` in {0, 1, 2} and `n_eeg` in `1..=max_eeg`; U-Sleep rows
/// without EOG are left out.
pub fn scaling_table(max_eeg: u64, depth: u64) -> Result<Vec<CostRow>, CostError> {
    let mut rows = Vec::new();
    for arch in Arch::ALL {
        for n_eog in 0..=2 {
            for n_eeg in 1..=max_eeg {
                match steps(arch, n_eeg, n_eog, depth) {
                    Ok(steps) => rows.push(CostRow { arch, n_eeg, n_eog, steps }),
                    Err(CostError::Protocol { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(rows)
}

pub fn table_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("arch,n_eeg,n_eog,steps\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.arch, r.n_eeg, r.n_eog, r.steps));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_counts() {
        assert_eq!(steps(Arch::Mid, 1, 1, 12), Ok(50));
        assert_eq!(steps(Arch::USleep, 1, 1, 12), Ok(25));
        assert_eq!(steps(Arch::USleep, 6, 1, 12), Ok(150));
        assert_eq!(steps(Arch::Mid, 6, 1, 12), Ok(110));
        assert_eq!(steps(Arch::Mid, 5, 1, 12), Ok(98));
        assert_eq!(steps(Arch::USleep, 3, 0, 12), Err(CostError::Protocol { n_eeg: 3, n_eog: 0 }));
        assert_eq!(steps(Arch::Mid, 0, 0, 12), Err(CostError::NoChannels));
    }

    #[test]
    fn minimal_table() {
        let rows = scaling_table(1, 4).unwrap();
        // three layouts for the fused models, two for the pairwise protocol
        assert_eq!(rows.len(), 3 * 3 + 2);
        let csv = table_csv(&rows);
        assert!(csv.starts_with("arch,n_eeg,n_eog,steps\nmid,1,0,"));
        assert_eq!("USleep".parse::<Arch>(), Ok(Arch::USleep));
        assert!("x".parse::<Arch>().is_err());
    }
}
