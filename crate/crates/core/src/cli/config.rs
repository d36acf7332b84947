//! Experiment configuration files (JSON) and their resolved snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::evaluation::{AbsentStagePolicy, Scope};
use crate::hifreq::OverlapMeasure;
use crate::model::ModelConfig;
use crate::signal_io::SynthSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Manifest JSON; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Training datasets; empty means every dataset not used for validation
    /// or testing.
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: SynthSpec,
    /// Recordings per dataset name.
    pub datasets: BTreeMap<String, usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            datasets: BTreeMap::from([("synth".to_string(), 10)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scope: Scope,
    pub absent_stage: AbsentStagePolicy,
    /// Epochs per inference pass for long recordings.
    pub chunk_epochs: usize,
    pub iou_threshold: f64,
    pub overlap: OverlapMeasure,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scope: Scope::Dataset,
            absent_stage: AbsentStagePolicy::Exclude,
            chunk_epochs: 256,
            iou_threshold: 0.2,
            overlap: OverlapMeasure::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; overrides `train.seed`.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    pub synth: SynthConfig,
    pub evaluation: EvalConfig,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and resolves a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.corpus.manifest {
            if m.is_relative() {
                cfg.corpus.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    /// Copies the master seed into the sections that consume it and checks
    /// every section.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.train.seed = self.seed;
        self.model.validate().map_err(CliError::usage)?;
        self.train.validate().map_err(CliError::usage)?;
        self.synth.spec.validate().map_err(CliError::usage)?;
        let e = &self.evaluation;
        if e.chunk_epochs == 0 {
            return Err(CliError::Usage("evaluation.chunk_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&e.iou_threshold) {
            return Err(CliError::Usage("evaluation.iou_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Fingerprint of everything that shapes a training run.
    pub fn train_hash(&self) -> String {
        let key = serde_json::json!({
            "seed": self.seed,
            "model": self.model,
            "train": self.train,
            "corpus": self.corpus,
        });
        hex_sha256(key.to_string().as_bytes())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `resolved_config.json` beside a command's outputs.
pub fn write_snapshot<A: Serialize>(dir: &Path, command: &str, args: &A, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let snap = serde_json::json!({
        "command": command,
        "args": args,
        "config": cfg,
    });
    let mut text = serde_json::to_string_pretty(&snap).map_err(CliError::internal)?;
    text.push('\n');
    super::write_file(&dir.join("resolved_config.json"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"batch_sise": 3}}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&p)), Err(CliError::Usage(_))));
        std::fs::write(&p, r#"{"model": {"depht": 3}}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&p)), Err(CliError::Usage(_))));
    }

    #[test]
    fn manifest_resolves_against_config_dir_and_seed_propagates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 9, "corpus": {"manifest": "data/manifest.json"}}"#).unwrap();
        let mut c = ExperimentConfig::load(Some(&p)).unwrap();
        c.resolve().unwrap();
        assert_eq!(c.corpus.manifest.unwrap(), dir.path().join("data/manifest.json"));
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn hash_tracks_training_fields_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.train_hash(), b.train_hash());
        b.train.lr = 0.5;
        assert_ne!(a.train_hash(), b.train_hash());
    }
}
