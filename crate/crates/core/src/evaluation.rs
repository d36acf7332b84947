//! Macro-F1 scoring, per-pair majority voting and multi-scorer consensus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stage::{Label, Stage, NUM_STAGES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("no scoreable epochs")]
    NothingToScore,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// How stages with `TP + FP + FN = 0` enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AbsentStagePolicy {
    /// Dropped from the average.
    #[default]
    Exclude,
    /// Counted with F1 = 0, so the average is always over five stages.
    Zero,
}

impl std::str::FromStr for AbsentStagePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exclude" => Ok(Self::Exclude),
            "zero" => Ok(Self::Zero),
            o => Err(format!("absent-stage policy must be exclude or zero, got `{o}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Score each recording on its own.
    Recording,
    /// Sum counts over recordings, then score once.
    #[default]
    Dataset,
}

impl std::str::FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "recording" => Ok(Self::Recording),
            "dataset" => Ok(Self::Dataset),
            o => Err(format!("scope must be recording or dataset, got `{o}`")),
        }
    }
}

/// Confusion matrix, rows = truth, columns = prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub matrix: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionCounts {
    /// Counts over epochs whose truth is not excluded.
    pub fn from_labels(pred: &[Stage], truth: &[Label]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::Length(pred.len(), truth.len()));
        }
        let mut c = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            if let Some(t) = t {
                c.matrix[t.index()][p.index()] += 1;
            }
        }
        Ok(c)
    }

    pub fn tp(&self, s: usize) -> u64 {
        self.matrix[s][s]
    }

    pub fn fp(&self, s: usize) -> u64 {
        (0..NUM_STAGES).filter(|&t| t != s).map(|t| self.matrix[t][s]).sum()
    }

    pub fn fn_(&self, s: usize) -> u64 {
        (0..NUM_STAGES).filter(|&p| p != s).map(|p| self.matrix[s][p]).sum()
    }

    pub fn tn(&self, s: usize) -> u64 {
        self.total() - self.tp(s) - self.fp(s) - self.fn_(s)
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_STAGES).map(|s| self.tp(s)).sum()
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.matrix.iter_mut().flatten().zip(other.matrix.iter().flatten()) {
            *a += b;
        }
    }

    /// `2TP / (2TP + FP + FN)` per stage; `None` when the stage never
    /// occurs in truth or prediction.
    pub fn per_stage_f1(&self) -> [Option<f64>; NUM_STAGES] {
        std::array::from_fn(|s| {
            let (tp, fp, fn_) = (self.tp(s), self.fp(s), self.fn_(s));
            let d = 2 * tp + fp + fn_;
            (d > 0).then(|| 2.0 * tp as f64 / d as f64)
        })
    }

    pub fn macro_f1(&self, policy: AbsentStagePolicy) -> Result<f64, EvalError> {
        if self.total() == 0 {
            return Err(EvalError::NothingToScore);
        }
        let f1 = self.per_stage_f1();
        Ok(match policy {
            AbsentStagePolicy::Zero => f1.iter().map(|f| f.unwrap_or(0.0)).sum::<f64>() / NUM_STAGES as f64,
            AbsentStagePolicy::Exclude => {
                let present: Vec<f64> = f1.iter().flatten().copied().collect();
                present.iter().sum::<f64>() / present.len() as f64
            }
        })
    }
}

/// Macro F1 of one prediction against one hypnogram; excluded truth epochs
/// are skipped.
pub fn macro_f1(pred: &[Stage], truth: &[Label], policy: AbsentStagePolicy) -> Result<f64, EvalError> {
    ConfusionCounts::from_labels(pred, truth)?.macro_f1(policy)
}

/// One score per recording, or a single score from the summed counts.
pub fn aggregate(counts: &[ConfusionCounts], scope: Scope, policy: AbsentStagePolicy) -> Result<Vec<f64>, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::Empty("no recordings"));
    }
    match scope {
        Scope::Recording => counts.iter().map(|c| c.macro_f1(policy)).collect(),
        Scope::Dataset => Ok(vec![sum_counts(counts).macro_f1(policy)?]),
    }
}

pub fn sum_counts(counts: &[ConfusionCounts]) -> ConfusionCounts {
    let mut total = ConfusionCounts::default();
    for c in counts {
        total.add(c);
    }
    total
}

/// Per-epoch modal stage over equally long sequences; ties are broken by a
/// uniform draw from a ChaCha8 stream seeded with `seed`.
pub fn pairwise_majority_vote(seqs: &[Vec<Stage>], seed: u64) -> Result<Vec<Stage>, EvalError> {
    let first = seqs.first().ok_or(EvalError::Empty("no sequences to vote over"))?;
    for s in seqs {
        if s.len() != first.len() {
            return Err(EvalError::Length(first.len(), s.len()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..first.len())
        .map(|e| {
            let mut votes = [0usize; NUM_STAGES];
            for s in seqs {
                votes[s[e].index()] += 1;
            }
            let best = *votes.iter().max().expect("five stages");
            let tied: Vec<usize> = (0..NUM_STAGES).filter(|&i| votes[i] == best).collect();
            let pick = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
            Stage::from_index(pick).expect("stage index")
        })
        .collect())
}

/// Mean epoch-wise agreement of each scorer with every other scorer.
pub fn scorer_agreement(scorers: &[Vec<Label>]) -> Vec<f64> {
    let n = scorers.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let same = scorers[i].iter().zip(&scorers[j]).filter(|(a, b)| a == b).count();
                acc += same as f64 / scorers[i].len().max(1) as f64;
            }
            acc / (n - 1) as f64
        })
        .collect()
}

/// Scorers ranked by mean agreement (ties keep input order), the lowest
/// dropped, at most four kept; per epoch the majority label among those,
/// with ties going to the best-ranked scorer holding a tied label.
pub fn scorer_consensus(scorers: &[Vec<Label>]) -> Result<Vec<Label>, EvalError> {
    if scorers.len() < 2 {
        return Err(EvalError::Empty("consensus needs at least two scorers"));
    }
    let len = scorers[0].len();
    for s in scorers {
        if s.len() != len {
            return Err(EvalError::Length(len, s.len()));
        }
    }
    let agreement = scorer_agreement(scorers);
    let mut rank: Vec<usize> = (0..scorers.len()).collect();
    rank.sort_by(|&a, &b| agreement[b].total_cmp(&agreement[a]));
    rank.truncate((scorers.len() - 1).min(4));
    Ok((0..len)
        .map(|e| {
            let labels: Vec<Label> = rank.iter().map(|&r| scorers[r][e]).collect();
            let count = |l: &Label| labels.iter().filter(|x| *x == l).count();
            let best = labels.iter().map(count).max().expect("non-empty");
            *labels.iter().find(|l| count(l) == best).expect("a modal label")
        })
        .collect())
}

/// Scores of one recording for the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub mf1: f64,
    pub per_stage_f1: [Option<f64>; NUM_STAGES],
    pub confusion: ConfusionCounts,
}

impl ScoreEntry {
    pub fn new(id: impl Into<String>, counts: ConfusionCounts, policy: AbsentStagePolicy) -> Result<Self, EvalError> {
        Ok(Self {
            id: id.into(),
            mf1: counts.macro_f1(policy)?,
            per_stage_f1: counts.per_stage_f1(),
            confusion: counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub absent_stage: AbsentStagePolicy,
    pub seed: Option<u64>,
    pub stages: [String; NUM_STAGES],
    /// Filled for recording scope.
    pub recordings: Vec<ScoreEntry>,
    /// Filled for dataset scope.
    pub dataset: Option<ScoreEntry>,
}

impl MetricsReport {
    pub fn build(
        named: &[(String, ConfusionCounts)],
        scope: Scope,
        policy: AbsentStagePolicy,
        seed: Option<u64>,
    ) -> Result<Self, EvalError> {
        if named.is_empty() {
            return Err(EvalError::Empty("no recordings"));
        }
        let mut report = Self {
            scope,
            absent_stage: policy,
            seed,
            stages: Stage::ALL.map(|s| s.code().to_string()),
            recordings: Vec::new(),
            dataset: None,
        };
        match scope {
            Scope::Recording => {
                for (id, c) in named {
                    report.recordings.push(ScoreEntry::new(id.clone(), *c, policy)?);
                }
            }
            Scope::Dataset => {
                let counts: Vec<ConfusionCounts> = named.iter().map(|(_, c)| *c).collect();
                report.dataset = Some(ScoreEntry::new("dataset", sum_counts(&counts), policy)?);
            }
        }
        Ok(report)
    }
}
