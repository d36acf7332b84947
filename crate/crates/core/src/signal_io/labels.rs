use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Hypnogram, SignalError};
use crate::stage::{Label, Stage};

/// Source-alphabet symbol to harmonized label. Lookup is case-insensitive
/// on the trimmed symbol; `None` targets mean excluded epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    pub map: BTreeMap<String, Label>,
}

impl Default for LabelTable {
    fn default() -> Self {
        use Stage::*;
        let rows: [(&[&str], Label); 6] = [
            (&["W", "WAKE", "SLEEP STAGE W", "0"], Some(Wake)),
            (&["N1", "S1", "SLEEP STAGE 1", "SLEEP STAGE N1", "1"], Some(N1)),
            (&["N2", "S2", "SLEEP STAGE 2", "SLEEP STAGE N2", "2"], Some(N2)),
            (
                &["N3", "S3", "N4", "S4", "SLEEP STAGE 3", "SLEEP STAGE 4", "SLEEP STAGE N3", "3", "4"],
                Some(N3),
            ),
            (&["R", "REM", "SLEEP STAGE R", "5"], Some(Rem)),
            (
                &[
                    "EXC",
                    "MOVEMENT",
                    "MT",
                    "MOVEMENT TIME",
                    "ARTIFACT",
                    "ARTEFACT",
                    "UNKNOWN",
                    "UNSCORED",
                    "?",
                    "SLEEP STAGE ?",
                    "6",
                    "9",
                ],
                None,
            ),
        ];
        let map = rows
            .iter()
            .flat_map(|(syms, label)| syms.iter().map(move |s| (s.to_string(), *label)))
            .collect();
        Self { map }
    }
}

impl LabelTable {
    pub fn lookup(&self, symbol: &str) -> Option<Label> {
        self.map.get(&symbol.trim().to_ascii_uppercase()).copied()
    }
}

/// Maps raw per-epoch symbols to a hypnogram: N4 merges into N3 and
/// movement, artifact and unknown symbols become excluded epochs.
pub fn harmonize_labels<S: AsRef<str>>(raw: &[S], table: &LabelTable) -> Result<Hypnogram, SignalError> {
    let mut unknown: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(raw.len());
    for s in raw {
        match table.lookup(s.as_ref()) {
            Some(l) => labels.push(l),
            None => {
                if !unknown.iter().any(|u| u == s.as_ref()) {
                    unknown.push(s.as_ref().to_string());
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(SignalError::Mapping(unknown));
    }
    if labels.is_empty() {
        return Err(SignalError::Config("a hypnogram needs at least one epoch".into()));
    }
    Ok(Hypnogram::new(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let t = LabelTable::default();
        let h = harmonize_labels(&["N4", "REM", "MOVEMENT", "W", "s2", " Sleep stage 1 "], &t).unwrap();
        assert_eq!(
            h.labels,
            vec![Some(Stage::N3), Some(Stage::Rem), None, Some(Stage::Wake), Some(Stage::N2), Some(Stage::N1)]
        );
    }

    #[test]
    fn unknown_symbols_are_listed_once() {
        let err = harmonize_labels(&["W", "Q", "N2", "Q", "Z"], &LabelTable::default()).unwrap_err();
        match err {
            SignalError::Mapping(s) => assert_eq!(s, vec!["Q".to_string(), "Z".to_string()]),
            other => panic!("{other}"),
        }
    }
}
