//! Optimization loop: sampled batches, masked cross-entropy, AMSGrad,
//! per-epoch validation with early stopping, and a deterministic run log.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{sum_counts, AbsentStagePolicy, ConfusionCounts, EvalError};
use crate::model::{
    classify, forward_features, predict_chunked, Checkpoint, ChunkOptions, Mode, ModelConfig, ModelError,
    Parameters, EPOCH_SAMPLES,
};
use crate::numkernel::{AmsGradConfig, Array, Backend, Graph, KernelError, OptimizerState, TapeBackend};
use crate::sampling::{BatchSample, IndexedRecording, Sampler, SamplingConfig, SamplingCorpus, SamplingError};
use crate::signal_io::{prepare, LoadedRecording, SignalError};
use crate::stage::{Label, Stage};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),
    #[error("validation corpus has no scoreable epochs")]
    NoScoreableEpochs,
    #[error("non-finite loss or gradient at epoch {epoch}, update {update}; training aborted")]
    NonFinite {
        epoch: usize,
        update: usize,
        /// Best validated parameters so far (the initial ones before any
        /// validation).
        last_good: Box<Checkpoint>,
    },
    #[error("resume state: {0}")]
    State(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Gradient updates between validations.
    pub updates_per_epoch: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation MF1 must beat the best so far by at least this much.
    pub min_improvement: f64,
    /// Epochs per validation forward pass; longer recordings are chunked.
    pub valid_chunk_epochs: usize,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            updates_per_epoch: 32,
            max_epochs: 200,
            patience: 20,
            lr: 1e-3,
            seed: 0,
            min_improvement: 1e-6,
            valid_chunk_epochs: 256,
            sampling: SamplingConfig {
                seq_len: 3,
                ..SamplingConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 || self.updates_per_epoch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, updates_per_epoch, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.min_improvement >= 0.0) {
            return bad("min_improvement must be non-negative");
        }
        if self.valid_chunk_epochs == 0 {
            return bad("valid_chunk_epochs must be positive");
        }
        self.sampling.validate()?;
        Ok(())
    }

    pub fn optimizer(&self) -> AmsGradConfig {
        AmsGradConfig {
            lr: self.lr,
            ..AmsGradConfig::default()
        }
    }
}

/// One recording resampled, normalized and cut to whole labelled epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecording {
    pub id: String,
    pub dataset: String,
    pub channel_names: Vec<String>,
    /// `[channels, epochs * 3840]`
    pub signal: Array,
    pub labels: Vec<Label>,
}

impl PreparedRecording {
    pub fn from_loaded(rec: &LoadedRecording) -> Result<Self, TrainError> {
        let (signal, _) = prepare(&rec.recording, None)?;
        let available = signal.shape()[1] / EPOCH_SAMPLES;
        let epochs = available.min(rec.hypnogram.len());
        if epochs == 0 {
            return Err(TrainError::EmptyCorpus("recording without whole labelled epochs"));
        }
        let signal = if epochs < available {
            take_columns(&signal, 0, epochs * EPOCH_SAMPLES)?
        } else {
            signal
        };
        Ok(Self {
            id: rec.recording.id.clone(),
            dataset: rec.dataset.clone(),
            channel_names: rec.recording.channel_names(),
            signal,
            labels: rec.hypnogram.labels[..epochs].to_vec(),
        })
    }

    pub fn channels(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn epochs(&self) -> usize {
        self.labels.len()
    }

    /// The same recording restricted to the given channel rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, TrainError> {
        let t = self.signal.shape()[1];
        let mut data = Vec::with_capacity(rows.len() * t);
        for &r in rows {
            if r >= self.channels() {
                return Err(TrainError::Config(format!("{} has no channel {r}", self.id)));
            }
            data.extend_from_slice(self.signal.row(r));
        }
        Ok(Self {
            signal: Array::new(vec![rows.len(), t], data)?,
            channel_names: rows.iter().map(|&r| self.channel_names[r].clone()).collect(),
            ..self.clone()
        })
    }
}

fn take_columns(x: &Array, from: usize, to: usize) -> Result<Array, KernelError> {
    let c = x.shape()[0];
    let mut data = Vec::with_capacity(c * (to - from));
    for r in 0..c {
        data.extend_from_slice(&x.row(r)[from..to]);
    }
    Array::new(vec![c, to - from], data)
}

/// Prepared recordings grouped by dataset name (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub recordings: Vec<PreparedRecording>,
}

impl Corpus {
    pub fn new(recordings: Vec<PreparedRecording>) -> Self {
        Self { recordings }
    }

    pub fn from_loaded(loaded: &[LoadedRecording]) -> Result<Self, TrainError> {
        let recordings = loaded
            .par_iter()
            .map(PreparedRecording::from_loaded)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { recordings })
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    /// Keeps the given channel rows of every recording.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, TrainError> {
        Ok(Self {
            recordings: self.recordings.iter().map(|r| r.select_rows(rows)).collect::<Result<_, _>>()?,
        })
    }

    /// Recording indices per dataset, datasets in name order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.recordings.iter().enumerate() {
            by_name.entry(r.dataset.as_str()).or_default().push(i);
        }
        by_name.into_values().collect()
    }

    pub fn sampling_corpus(&self) -> (SamplingCorpus, Vec<Vec<usize>>) {
        let groups = self.groups();
        let datasets = groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&i| {
                        let r = &self.recordings[i];
                        IndexedRecording::new(r.id.clone(), r.labels.clone(), r.channels())
                    })
                    .collect()
            })
            .collect();
        (SamplingCorpus { datasets }, groups)
    }
}

/// Stacks sampled windows into `[batch, n, len * 3840]` plus flattened
/// targets indexed `b * len + e`.
pub fn assemble_batch(
    corpus: &Corpus,
    groups: &[Vec<usize>],
    batch: &[BatchSample],
) -> Result<(Array, Vec<Label>), TrainError> {
    let first = batch.first().ok_or(TrainError::Config("empty batch".into()))?;
    let (n, len) = (first.channels.len(), first.len);
    let t = len * EPOCH_SAMPLES;
    let mut data = Vec::with_capacity(batch.len() * n * t);
    let mut targets = Vec::with_capacity(batch.len() * len);
    for s in batch {
        if s.channels.len() != n || s.len != len {
            return Err(TrainError::Config("batch samples differ in shape".into()));
        }
        let rec = &corpus.recordings[groups[s.dataset][s.recording]];
        for &ch in &s.channels {
            data.extend_from_slice(&rec.signal.row(ch)[s.start * EPOCH_SAMPLES..(s.start + len) * EPOCH_SAMPLES]);
        }
        targets.extend_from_slice(&s.targets);
    }
    Ok((Array::new(vec![batch.len(), n, t], data)?, targets))
}

/// Loss of one batch at resolution 1 with gradients for every parameter
/// (name order) and the batch statistics of every normalization layer.
pub struct StepOutput {
    pub loss: f64,
    pub grads: Vec<Array>,
    pub norm_updates: Vec<crate::model::NormUpdate>,
}

pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &Parameters,
    input: &Array,
    targets: &[Label],
) -> Result<StepOutput, TrainError> {
    let mut graph = Graph::new();
    let mut be = TapeBackend::new(&mut graph);
    let x = be.input(input.clone());
    let feats = forward_features(&mut be, cfg, params, &x, Mode::Train)?;
    let p = classify(&mut be, &feats.logits, 1)?;
    let leaves: BTreeMap<String, crate::numkernel::NodeId> = be.params().iter().cloned().collect();
    let t: Vec<Option<usize>> = targets.iter().map(|l| l.map(Stage::index)).collect();
    let root = graph.cross_entropy(p, &t)?;
    let loss = graph.value(root).data()[0];
    graph.backward(root)?;
    let grads = params
        .iter()
        .map(|(name, a)| {
            leaves
                .get(name)
                .and_then(|&id| graph.take_grad(id))
                .unwrap_or_else(|| Array::zeros(a.shape()))
        })
        .collect();
    Ok(StepOutput {
        loss,
        grads,
        norm_updates: feats.norm_updates,
    })
}

/// Loss only, evaluated with training-mode normalization.
pub fn batch_loss(cfg: &ModelConfig, params: &Parameters, input: &Array, targets: &[Label]) -> Result<f64, TrainError> {
    let mut be = crate::numkernel::EvalBackend;
    let feats = forward_features(&mut be, cfg, params, input, Mode::Train)?;
    let p = classify(&mut be, &feats.logits, 1)?;
    let t: Vec<Option<usize>> = targets.iter().map(|l| l.map(Stage::index)).collect();
    let mut g = Graph::new();
    let id = g.leaf(p, false);
    let root = g.cross_entropy(id, &t)?;
    Ok(g.value(root).data()[0])
}

/// Confusion counts of every recording at resolution 1, in corpus order.
pub fn corpus_counts(
    cfg: &ModelConfig,
    params: &Parameters,
    corpus: &Corpus,
    chunk_epochs: usize,
) -> Result<Vec<ConfusionCounts>, TrainError> {
    let opts = ChunkOptions {
        chunk_epochs,
        overlap_epochs: None,
    };
    counts_with(corpus, |r| {
        let (probs, _) = predict_chunked(cfg, params, &r.signal, &[1], opts)?;
        Ok(probs[0].argmax())
    })
}

/// Confusion counts from an arbitrary per-recording predictor.
pub fn counts_with<P>(corpus: &Corpus, predict: P) -> Result<Vec<ConfusionCounts>, TrainError>
where
    P: Fn(&PreparedRecording) -> Result<Vec<Stage>, TrainError> + Sync,
{
    corpus
        .recordings
        .par_iter()
        .map(|r| Ok(ConfusionCounts::from_labels(&predict(r)?, &r.labels)?))
        .collect()
}

/// Dataset-scope MF1 (five-way average) of a predictor over a corpus.
pub fn validate_with<P>(corpus: &Corpus, predict: P) -> Result<f64, TrainError>
where
    P: Fn(&PreparedRecording) -> Result<Vec<Stage>, TrainError> + Sync,
{
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus("validation corpus"));
    }
    let counts = counts_with(corpus, predict)?;
    sum_counts(&counts)
        .macro_f1(AbsentStagePolicy::Zero)
        .map_err(|e| match e {
            EvalError::NothingToScore => TrainError::NoScoreableEpochs,
            other => other.into(),
        })
}

/// Model MF1 over a corpus from full-recording forwards at resolution 1.
pub fn validate(
    cfg: &ModelConfig,
    params: &Parameters,
    corpus: &Corpus,
    chunk_epochs: usize,
) -> Result<f64, TrainError> {
    let opts = ChunkOptions {
        chunk_epochs,
        overlap_epochs: None,
    };
    validate_with(corpus, |r| {
        let (probs, _) = predict_chunked(cfg, params, &r.signal, &[1], opts)?;
        Ok(probs[0].argmax())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mf1: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation score.
    pub best: Option<usize>,
}

impl RunLog {
    /// `epoch,train_loss,valid_mf1,best`; wall time is left out so reruns
    /// compare byte for byte (see [`RunLog::timing_csv`]).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_mf1,best\n");
        for (i, r) in self.epochs.iter().enumerate() {
            let best = u8::from(self.best == Some(i));
            out.push_str(&format!("{},{:?},{:?},{best}\n", r.epoch, r.train_loss, r.valid_mf1));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_seconds\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{:.3}\n", r.epoch, r.wall_seconds));
        }
        out
    }

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.epochs[i])
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub params: Parameters,
    pub best_params: Parameters,
    pub best_mf1: Option<f64>,
    pub since_best: usize,
    pub optimizer: OptimizerState,
    pub sampler_pos: u128,
    pub log: RunLog,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    config_hash: String,
    epoch: usize,
    best_mf1: Option<f64>,
    since_best: usize,
    sampler_pos: String,
    optimizer: OptimizerState,
    log: RunLog,
}

const STATE_JSON: &str = "state.json";
const CURRENT_CKPT: &str = "current.ckpt";
const BEST_CKPT: &str = "best.ckpt";

impl TrainState {
    pub fn save(&self, dir: &Path, cfg: &ModelConfig, config_hash: &str) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let file = StateFile {
            config_hash: config_hash.to_string(),
            epoch: self.epoch,
            best_mf1: self.best_mf1,
            since_best: self.since_best,
            sampler_pos: self.sampler_pos.to_string(),
            optimizer: self.optimizer.clone(),
            log: self.log.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| TrainError::State(e.to_string()))?;
        let p = dir.join(STATE_JSON);
        std::fs::write(&p, json).map_err(|e| io_err(&p, e))?;
        for (name, params) in [(CURRENT_CKPT, &self.params), (BEST_CKPT, &self.best_params)] {
            Checkpoint {
                config: cfg.clone(),
                params: params.clone(),
            }
            .save(&dir.join(name))?;
        }
        Ok(())
    }

    /// Loads a saved state, refusing one written under a different config.
    pub fn load(dir: &Path, config_hash: &str) -> Result<(Self, ModelConfig), TrainError> {
        let p = dir.join(STATE_JSON);
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let file: StateFile = serde_json::from_str(&text).map_err(|e| TrainError::State(e.to_string()))?;
        if file.config_hash != config_hash {
            return Err(TrainError::State(format!(
                "config hash mismatch: state has {}, current config is {config_hash}",
                file.config_hash
            )));
        }
        let current = Checkpoint::load(&dir.join(CURRENT_CKPT))?;
        let best = Checkpoint::load(&dir.join(BEST_CKPT))?;
        let sampler_pos = file
            .sampler_pos
            .parse()
            .map_err(|_| TrainError::State("bad sampler position".into()))?;
        Ok((
            Self {
                epoch: file.epoch,
                params: current.params,
                best_params: best.params,
                best_mf1: file.best_mf1,
                since_best: file.since_best,
                optimizer: file.optimizer,
                sampler_pos,
                log: file.log,
            },
            current.config,
        ))
    }
}

/// Stepwise training driver; [`train`] runs it to completion.
pub struct Trainer<'a> {
    model: ModelConfig,
    cfg: TrainConfig,
    train: &'a Corpus,
    groups: Vec<Vec<usize>>,
    sampling: SamplingCorpus,
    sampler: Sampler,
    state: TrainState,
    done: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &ModelConfig, train: &'a Corpus, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let params = Parameters::init(model, crate::seeds::derive_seed(cfg.seed, "init", 0))?;
        let sizes: Vec<usize> = params.iter().map(|(_, a)| a.len()).collect();
        let state = TrainState {
            epoch: 0,
            best_params: params.clone(),
            params,
            best_mf1: None,
            since_best: 0,
            optimizer: OptimizerState::new(cfg.optimizer(), &sizes),
            sampler_pos: 0,
            log: RunLog::default(),
        };
        Self::resume(model, train, cfg, state)
    }

    pub fn resume(model: &ModelConfig, train: &'a Corpus, cfg: &TrainConfig, state: TrainState) -> Result<Self, TrainError> {
        model.validate()?;
        cfg.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptyCorpus("training corpus"));
        }
        let (sampling, groups) = train.sampling_corpus();
        let mut sampler = Sampler::new(
            crate::seeds::derive_seed(cfg.seed, "sampler", 0),
            0,
            &sampling,
            cfg.sampling.clone(),
        )?;
        sampler.set_word_pos(state.sampler_pos);
        let done = state.since_best >= cfg.patience || state.epoch >= cfg.max_epochs;
        Ok(Self {
            model: model.clone(),
            cfg: cfg.clone(),
            train,
            groups,
            sampling,
            sampler,
            state,
            done,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// One gradient update; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let batch = self.sampler.next_batch(&self.sampling, self.cfg.batch_size)?;
        let (input, targets) = assemble_batch(self.train, &self.groups, &batch)?;
        let out = loss_and_grads(&self.model, &self.state.params, &input, &targets)?;
        let abort = |s: &Self| TrainError::NonFinite {
            epoch: s.state.epoch + 1,
            update: s.state.optimizer.step_count() as usize,
            last_good: Box::new(Checkpoint {
                config: s.model.clone(),
                params: s.state.best_params.clone(),
            }),
        };
        if !out.loss.is_finite() {
            return Err(abort(self));
        }
        {
            let (names, mut values): (Vec<&str>, Vec<&mut Array>) = self.state.params.iter_mut().unzip();
            let grads: Vec<&Array> = out.grads.iter().collect();
            let res = self.state.optimizer.step(&names, &mut values, &grads);
            if let Err(KernelError::NonFiniteGradient(_)) = res {
                return Err(abort(self));
            }
            res?;
        }
        for u in &out.norm_updates {
            self.state.params.apply_norm_update(u, self.model.norm_momentum)?;
        }
        if !self.state.params.all_finite() {
            return Err(abort(self));
        }
        self.state.sampler_pos = self.sampler.word_pos();
        Ok(out.loss)
    }

    /// Updates for one training epoch, then validation and the early-stopping
    /// bookkeeping. Returns the new log record.
    pub fn run_epoch<V>(&mut self, validator: &mut V) -> Result<EpochRecord, TrainError>
    where
        V: FnMut(&Parameters) -> Result<f64, TrainError>,
    {
        let started = Instant::now();
        let mut loss = 0.0;
        for _ in 0..self.cfg.updates_per_epoch {
            loss += self.step()?;
        }
        let mf1 = validator(&self.state.params)?;
        let st = &mut self.state;
        st.epoch += 1;
        let record = EpochRecord {
            epoch: st.epoch,
            train_loss: loss / self.cfg.updates_per_epoch as f64,
            valid_mf1: mf1,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        st.log.epochs.push(record.clone());
        let improved = st.best_mf1.is_none_or(|b| mf1 >= b + self.cfg.min_improvement && mf1 > b);
        if improved {
            st.best_mf1 = Some(mf1);
            st.best_params = st.params.clone();
            st.since_best = 0;
            st.log.best = Some(st.log.epochs.len() - 1);
        } else {
            st.since_best += 1;
        }
        self.done = st.since_best >= self.cfg.patience || st.epoch >= self.cfg.max_epochs;
        Ok(record)
    }

    pub fn finish(self) -> (Checkpoint, RunLog) {
        (
            Checkpoint {
                config: self.model,
                params: self.state.best_params,
            },
            self.state.log,
        )
    }
}

/// Trains from a fresh initialization; validation MF1 comes from `validator`.
pub fn train_with_validator<V>(
    model: &ModelConfig,
    train: &Corpus,
    cfg: &TrainConfig,
    mut validator: V,
) -> Result<(Checkpoint, RunLog), TrainError>
where
    V: FnMut(&Parameters) -> Result<f64, TrainError>,
{
    let mut t = Trainer::new(model, train, cfg)?;
    while !t.is_done() {
        t.run_epoch(&mut validator)?;
    }
    Ok(t.finish())
}

/// Full run: returns the parameters of the best validation epoch.
pub fn train(
    model: &ModelConfig,
    train: &Corpus,
    valid: &Corpus,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, RunLog), TrainError> {
    if valid.is_empty() {
        return Err(TrainError::EmptyCorpus("validation corpus"));
    }
    if valid.recordings.iter().all(|r| r.labels.iter().all(Option::is_none)) {
        return Err(TrainError::NoScoreableEpochs);
    }
    train_with_validator(model, train, cfg, |p| validate(model, p, valid, cfg.valid_chunk_epochs))
}
