//! Recordings, hypnograms and events: EDF files, CSV sidecars,
//! preprocessing and the synthetic PSG generator.

mod edf;
mod labels;
mod manifest;
mod normalize;
mod resample;
mod sidecar;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use edf::{read_edf, write_edf, EdfOptions, ModalityTable, DIGITAL_MAX, DIGITAL_MIN};
pub use labels::{harmonize_labels, LabelTable};
pub use manifest::{LoadedRecording, Manifest, RecordingEntry};
pub use normalize::{normalize_robust, quantile, Normalized, CLIP};
pub use resample::{rational_ratio, resample_128, resample_poly, TARGET_RATE};
pub use sidecar::{read_events, read_hypnogram, write_events, write_hypnogram};
pub use synth::{synth_generate, SynthSpec, TRANSITIONS};

use crate::numkernel::Array;
use crate::stage::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Eog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub modality: Modality,
    /// Hz
    pub rate: f64,
    /// µV
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub channels: Vec<Channel>,
}

impl Recording {
    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    /// Keeps the named channels, in the order given.
    pub fn select(&self, names: &[String]) -> Result<Recording, SignalError> {
        let channels = names
            .iter()
            .map(|n| {
                self.channels
                    .iter()
                    .find(|c| &c.name == n)
                    .cloned()
                    .ok_or_else(|| SignalError::Config(format!("recording {} has no channel `{n}`", self.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Recording {
            id: self.id.clone(),
            channels,
        })
    }
}

/// Per-epoch stage labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypnogram {
    pub epoch_seconds: f64,
    pub labels: Vec<Label>,
}

impl Hypnogram {
    pub fn new(labels: Vec<Label>) -> Self {
        Self {
            epoch_seconds: 30.0,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Arousal,
    Candidate,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arousal => "arousal",
            EventKind::Candidate => "candidate",
        }
    }
}

/// An event in seconds from the recording start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventInterval {
    pub onset: f64,
    pub duration: f64,
    pub kind: EventKind,
}

impl EventInterval {
    pub fn new(onset: f64, duration: f64, kind: EventKind) -> Result<Self, SignalError> {
        if !(onset >= 0.0) || !(duration > 0.0) || !onset.is_finite() || !duration.is_finite() {
            return Err(SignalError::Config(format!(
                "event needs onset >= 0 and duration > 0, got onset {onset}, duration {duration}"
            )));
        }
        Ok(Self { onset, duration, kind })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("range error: {0}")]
    Range(String),
    #[error("resample error: {0}")]
    Resample(String),
    #[error("mapping error: unknown label symbol(s) {0:?}")]
    Mapping(Vec<String>),
    #[error("config error: {0}")]
    Config(String),
    #[error("sidecar error in {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SignalError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        SignalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Model input from a recording: every channel resampled to 128 Hz,
/// robustly normalized and cut to `epochs` whole 30-s epochs (or as many as
/// the shortest channel holds). Returns `[c, epochs * 3840]` and the names
/// of channels flagged as degenerate.
pub fn prepare(recording: &Recording, epochs: Option<usize>) -> Result<(Array, Vec<String>), SignalError> {
    if recording.channels.is_empty() {
        return Err(SignalError::Config(format!("recording {} has no channels", recording.id)));
    }
    let epoch = 30 * TARGET_RATE;
    let mut rows = Vec::with_capacity(recording.channels.len());
    for ch in &recording.channels {
        rows.push(resample_128(&ch.samples, ch.rate)?);
    }
    let available = rows.iter().map(Vec::len).min().unwrap_or(0) / epoch;
    let n = epochs.unwrap_or(available);
    if n == 0 || n > available {
        return Err(SignalError::Config(format!(
            "recording {} holds {available} whole epochs, {n} requested",
            recording.id
        )));
    }
    let mut data = Vec::with_capacity(rows.len() * n * epoch);
    let mut degenerate = Vec::new();
    for (ch, row) in recording.channels.iter().zip(rows) {
        let norm = normalize_robust(&row)?;
        if norm.degenerate {
            degenerate.push(ch.name.clone());
        }
        data.extend_from_slice(&norm.samples[..n * epoch]);
    }
    let c = recording.channels.len();
    let x = Array::new(vec![c, n * epoch], data).map_err(|e| SignalError::Config(e.to_string()))?;
    Ok((x, degenerate))
}
