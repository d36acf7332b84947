//! Training-batch construction: stage-stratified anchors, dataset weighting,
//! sequence placement and channel subsampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stage::{Label, Stage, NUM_STAGES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("config error: {0}")]
    Config(String),
    #[error("sampling error: no recording with stage {stage} found after {retries} retries")]
    MissingStage { stage: Stage, retries: usize },
    #[error("recording {recording} has {epochs} epochs, shorter than the sequence length {len}")]
    TooShort { recording: String, epochs: usize, len: usize },
    #[error("recording {0} has no channels")]
    NoChannels(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Weight of the uniform-over-datasets term in the dataset distribution.
    pub alpha: f64,
    /// Epochs per training sequence.
    pub seq_len: usize,
    /// Largest channel count drawn per batch; `None` uses the most channels
    /// any training recording has.
    pub max_channels: Option<usize>,
    /// Dataset/recording redraws allowed when the recording lacks the anchor
    /// stage.
    pub max_retries: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            seq_len: 35,
            max_channels: None,
            max_retries: 1000,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SamplingError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.seq_len == 0 {
            return Err(SamplingError::Config("sequence length must be >= 1".into()));
        }
        if self.max_channels == Some(0) {
            return Err(SamplingError::Config("max_channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// `p_d = alpha / N_d + (1 - alpha) * N_rec_d / sum(N_rec)`.
pub fn dataset_probs(alpha: f64, counts: &[usize]) -> Result<Vec<f64>, SamplingError> {
    if counts.is_empty() {
        return Err(SamplingError::Config("no datasets".into()));
    }
    if counts.contains(&0) {
        return Err(SamplingError::Config("every dataset needs at least one recording".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SamplingError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = counts.len() as f64;
    let total: usize = counts.iter().sum();
    Ok(counts
        .iter()
        .map(|&c| alpha / n + (1.0 - alpha) * c as f64 / total as f64)
        .collect())
}

/// `p_n = 1 / (n * H_N)` for `n = 1..=N`, with `H_N` the harmonic number.
pub fn channel_count_probs(max_channels: usize) -> Result<Vec<f64>, SamplingError> {
    if max_channels == 0 {
        return Err(SamplingError::Config("channel count must be >= 1".into()));
    }
    // Summed smallest-first for accuracy.
    let h: f64 = (1..=max_channels).rev().map(|i| 1.0 / i as f64).sum();
    Ok((1..=max_channels).map(|n| 1.0 / (n as f64 * h)).collect())
}

/// Index drawn from a discrete distribution; the last index absorbs
/// rounding.
fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// What the sampler needs to know about one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedRecording {
    pub id: String,
    pub labels: Vec<Label>,
    pub channels: usize,
    by_stage: [Vec<usize>; NUM_STAGES],
}

impl IndexedRecording {
    pub fn new(id: impl Into<String>, labels: Vec<Label>, channels: usize) -> Self {
        let mut by_stage: [Vec<usize>; NUM_STAGES] = Default::default();
        for (e, l) in labels.iter().enumerate() {
            if let Some(s) = l {
                by_stage[s.index()].push(e);
            }
        }
        Self {
            id: id.into(),
            labels,
            channels,
            by_stage,
        }
    }

    pub fn epochs_of(&self, stage: Stage) -> &[usize] {
        &self.by_stage[stage.index()]
    }
}

/// Recordings grouped by dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingCorpus {
    pub datasets: Vec<Vec<IndexedRecording>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    pub dataset: usize,
    pub recording: usize,
    /// Channel indices into the recording, possibly repeated.
    pub channels: Vec<usize>,
    /// First epoch of the window `[start, start + len)`.
    pub start: usize,
    pub len: usize,
    pub anchor_stage: Stage,
    pub anchor_epoch: usize,
    /// Window labels; `None` entries are masked from the loss.
    pub targets: Vec<Label>,
}

/// Draws one training window: anchor stage uniform over the five stages,
/// dataset from `dataset_probs`, recording uniform within it (redrawing the
/// dataset when the recording lacks the stage), anchor epoch uniform among
/// that stage's epochs, and the anchor placed at a uniform offset in
/// `0..len`. Windows crossing a recording edge are shifted inward.
/// `channels` is left empty.
pub fn draw_sequence(
    rng: &mut ChaCha8Rng,
    corpus: &SamplingCorpus,
    dataset_p: &[f64],
    cfg: &SamplingConfig,
) -> Result<BatchSample, SamplingError> {
    let stage = Stage::from_index(rng.random_range(0..NUM_STAGES)).expect("five stages");
    let mut retries = 0;
    loop {
        let d = categorical(rng, dataset_p);
        let recs = &corpus.datasets[d];
        let r = rng.random_range(0..recs.len());
        let rec = &recs[r];
        let candidates = rec.epochs_of(stage);
        if candidates.is_empty() {
            retries += 1;
            if retries > cfg.max_retries {
                return Err(SamplingError::MissingStage {
                    stage,
                    retries: cfg.max_retries,
                });
            }
            continue;
        }
        let n = rec.labels.len();
        let len = cfg.seq_len;
        if n < len {
            return Err(SamplingError::TooShort {
                recording: rec.id.clone(),
                epochs: n,
                len,
            });
        }
        let anchor = candidates[rng.random_range(0..candidates.len())];
        let offset = rng.random_range(0..len);
        let start = anchor.saturating_sub(offset).min(n - len);
        return Ok(BatchSample {
            dataset: d,
            recording: r,
            channels: Vec::new(),
            start,
            len,
            anchor_stage: stage,
            anchor_epoch: anchor,
            targets: rec.labels[start..start + len].to_vec(),
        });
    }
}

/// `n` channel indices out of `available`, uniformly and without replacement
/// when possible, with replacement when `n > available`.
pub fn subsample_channels(rng: &mut ChaCha8Rng, available: usize, n: usize) -> Result<Vec<usize>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::Config("channel subset size must be >= 1".into()));
    }
    if available == 0 {
        return Err(SamplingError::NoChannels("?".into()));
    }
    if n > available {
        Ok((0..n).map(|_| rng.random_range(0..available)).collect())
    } else {
        Ok(index::sample(rng, available, n).into_vec())
    }
}

/// A seeded batch stream. Worker `w` uses ChaCha stream `w` of the master
/// seed, so concurrent samplers never share random numbers.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    cfg: SamplingConfig,
    dataset_p: Vec<f64>,
    channel_p: Vec<f64>,
}

impl Sampler {
    pub fn new(seed: u64, worker: u64, corpus: &SamplingCorpus, cfg: SamplingConfig) -> Result<Self, SamplingError> {
        cfg.validate()?;
        let counts: Vec<usize> = corpus.datasets.iter().map(Vec::len).collect();
        let dataset_p = dataset_probs(cfg.alpha, &counts)?;
        for rec in corpus.datasets.iter().flatten() {
            if rec.channels == 0 {
                return Err(SamplingError::NoChannels(rec.id.clone()));
            }
        }
        let most = corpus.datasets.iter().flatten().map(|r| r.channels).max().unwrap_or(1);
        let channel_p = channel_count_probs(cfg.max_channels.unwrap_or(most))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(worker);
        Ok(Self {
            rng,
            cfg,
            dataset_p,
            channel_p,
        })
    }

    pub fn dataset_probs(&self) -> &[f64] {
        &self.dataset_p
    }

    pub fn channel_probs(&self) -> &[f64] {
        &self.channel_p
    }

    /// Position in the random stream, for checkpointing.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// One batch: a single channel count `n` shared by every sample, then
    /// per-sample windows and channel subsets.
    pub fn next_batch(&mut self, corpus: &SamplingCorpus, size: usize) -> Result<Vec<BatchSample>, SamplingError> {
        let n = categorical(&mut self.rng, &self.channel_p) + 1;
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            let mut s = draw_sequence(&mut self.rng, corpus, &self.dataset_p, &self.cfg)?;
            let rec = &corpus.datasets[s.dataset][s.recording];
            s.channels = subsample_channels(&mut self.rng, rec.channels, n)
                .map_err(|e| match e {
                    SamplingError::NoChannels(_) => SamplingError::NoChannels(rec.id.clone()),
                    other => other,
                })?;
            out.push(s);
        }
        Ok(out)
    }
}
