//! Dataset manifests: JSON mapping dataset names to recordings (EDF plus
//! hypnogram and event sidecars), with paths relative to the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::edf::{read_edf, write_edf, EdfOptions, ModalityTable};
use super::sidecar::{read_events, read_hypnogram, write_events, write_hypnogram};
use super::synth::{synth_generate, SynthSpec};
use super::{EventInterval, Hypnogram, Recording, SignalError};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    pub id: String,
    pub edf: PathBuf,
    pub hypnogram: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthSpec>,
    pub datasets: BTreeMap<String, Vec<RecordingEntry>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, SignalError> {
        let text = std::fs::read_to_string(path).map_err(|e| SignalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SignalError::Sidecar {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), SignalError> {
        std::fs::write(path, self.to_json()).map_err(|e| SignalError::io(path, e))
    }

    pub fn recordings(&self) -> usize {
        self.datasets.values().map(Vec::len).sum()
    }

    /// Generates `counts[name]` recordings per dataset into `dir` and writes
    /// `dir/manifest.json`. Recording `i` of dataset `name` uses
    /// `derive_seed(seed, name, i)`.
    pub fn synthesize(
        seed: u64,
        spec: &SynthSpec,
        counts: &BTreeMap<String, usize>,
        dir: &Path,
    ) -> Result<Self, SignalError> {
        spec.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| SignalError::io(dir, e))?;
        let mut datasets = BTreeMap::new();
        for (name, &n) in counts {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(SignalError::Config(format!("dataset name `{name}` must be [A-Za-z0-9_-]+")));
            }
            let mut entries = Vec::with_capacity(n);
            for i in 0..n {
                let rseed = derive_seed(seed, name, i as u64);
                let (mut rec, hyp, events) = synth_generate(rseed, spec)?;
                let id = format!("{name}-{i:03}");
                rec.id = id.clone();
                let entry = RecordingEntry {
                    id: id.clone(),
                    edf: PathBuf::from(format!("{id}.edf")),
                    hypnogram: PathBuf::from(format!("{id}.hypnogram.csv")),
                    events: Some(PathBuf::from(format!("{id}.events.csv"))),
                    seed: Some(rseed),
                };
                write_edf(&rec, &dir.join(&entry.edf), &EdfOptions::default())?;
                write_hypnogram(&hyp, &dir.join(&entry.hypnogram))?;
                write_events(&events, &dir.join(entry.events.as_ref().expect("set above")))?;
                entries.push(entry);
            }
            datasets.insert(name.clone(), entries);
        }
        let m = Manifest {
            seed: Some(seed),
            generator: Some(spec.clone()),
            datasets,
        };
        m.save(&dir.join("manifest.json"))?;
        Ok(m)
    }
}

/// A recording loaded from disk with its annotations.
#[derive(Debug, Clone)]
pub struct LoadedRecording {
    pub dataset: String,
    pub recording: Recording,
    pub hypnogram: Hypnogram,
    pub events: Vec<EventInterval>,
    pub warnings: Vec<String>,
}

impl RecordingEntry {
    pub fn load(&self, base: &Path, dataset: &str, table: &ModalityTable) -> Result<LoadedRecording, SignalError> {
        let (mut recording, warnings) = read_edf(&base.join(&self.edf), table)?;
        recording.id = self.id.clone();
        let hypnogram = read_hypnogram(&base.join(&self.hypnogram))?;
        let events = match &self.events {
            Some(p) => read_events(&base.join(p))?,
            None => Vec::new(),
        };
        Ok(LoadedRecording {
            dataset: dataset.to_string(),
            recording,
            hypnogram,
            events,
            warnings,
        })
    }
}

impl Manifest {
    /// Loads every recording of the named datasets (all when `only` is
    /// empty), in dataset then manifest order.
    pub fn load_all(
        &self,
        base: &Path,
        only: &[String],
        table: &ModalityTable,
    ) -> Result<Vec<LoadedRecording>, SignalError> {
        for name in only {
            if !self.datasets.contains_key(name) {
                return Err(SignalError::Config(format!("manifest has no dataset `{name}`")));
            }
        }
        let mut out = Vec::new();
        for (name, entries) in &self.datasets {
            if !only.is_empty() && !only.contains(name) {
                continue;
            }
            for e in entries {
                out.push(e.load(base, name, table)?);
            }
        }
        Ok(out)
    }
}
