//! High-resolution analysis: resolution sweeps, wake overlap with annotated
//! arousals, rule-based arousal candidates, IoU event matching and stage
//! triplet features.
//!
//! Timelines are argmax stages at resolution `r`, so one row spans `30 / r`
//! seconds. Interval rules are evaluated in whole rows with integer
//! arithmetic to stay exact at every resolution.

use serde::{Deserialize, Serialize};

use crate::model::{
    check_resolution, predict_chunked, ChunkOptions, ModelConfig, ModelError, Parameters, StageProbabilities, RESOLUTIONS,
};
use crate::numkernel::Array;
use crate::signal_io::{EventInterval, EventKind};
use crate::stage::{Label, Stage, NUM_STAGES};

#[derive(Debug, thiserror::Error)]
pub enum HifreqError {
    #[error("undefined fraction: annotated arousals have zero total duration")]
    UndefinedFraction,
    #[error("prediction timeline covers {covered} s but an event ends at {end} s")]
    Coverage { covered: f64, end: f64 },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The fourteen output resolutions, predictions per 30-s epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSweep {
    pub resolutions: Vec<usize>,
}

impl Default for ResolutionSweep {
    fn default() -> Self {
        Self {
            resolutions: RESOLUTIONS.to_vec(),
        }
    }
}

impl ResolutionSweep {
    /// Every resolution from one forward pass per chunk.
    pub fn run(
        &self,
        cfg: &ModelConfig,
        params: &Parameters,
        signal: &Array,
        opts: ChunkOptions,
    ) -> Result<Vec<StageProbabilities>, HifreqError> {
        Ok(predict_chunked(cfg, params, signal, &self.resolutions, opts)?.0)
    }
}

/// Duration of one timeline row as an exact fraction of a second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowStep {
    pub num: u64,
    pub den: u64,
}

impl RowStep {
    /// Rows of a resolution-`r` prediction: `30 / r` seconds.
    pub fn resolution(r: usize) -> Result<Self, HifreqError> {
        check_resolution(r)?;
        Ok(Self { num: 30, den: r as u64 })
    }

    pub fn seconds(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Share of total annotated arousal time that falls on Wake predictions.
pub fn wake_overlap_fraction(stages: &[Stage], step: RowStep, events: &[EventInterval]) -> Result<f64, HifreqError> {
    let step = step.seconds();
    let covered = stages.len() as f64 * step;
    let total: f64 = events.iter().map(|e| e.duration).sum();
    if total <= 0.0 {
        return Err(HifreqError::UndefinedFraction);
    }
    let mut wake = 0.0;
    for e in events {
        if e.end() > covered + 1e-9 {
            return Err(HifreqError::Coverage { covered, end: e.end() });
        }
        let first = (e.onset / step).floor() as usize;
        let last = ((e.end() / step).ceil() as usize).min(stages.len());
        for (i, s) in stages.iter().enumerate().take(last).skip(first) {
            if *s == Stage::Wake {
                let lo = (i as f64 * step).max(e.onset);
                let hi = ((i + 1) as f64 * step).min(e.end());
                wake += (hi - lo).max(0.0);
            }
        }
    }
    Ok(wake / total)
}

/// Maximal runs of Wake as half-open row ranges.
pub fn wake_runs(stages: &[Stage]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, s) in stages.iter().enumerate() {
        match (start, *s == Stage::Wake) {
            (None, true) => start = Some(i),
            (Some(b), false) => {
                runs.push((b, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        runs.push((b, stages.len()));
    }
    runs
}

/// Rule-based arousal candidates from a Wake timeline:
///
/// 1. maximal Wake runs;
/// 2. repeatedly merge the leftmost adjacent pair whose gap is below 10 % of
///    the merged span and whose merged span is at most 15 s, until no pair
///    qualifies;
/// 3. drop segments with Wake anywhere in the raw timeline during the 10 s
///    before their onset (clipped at the recording start);
/// 4. keep segments lasting 3 to 15 s.
///
/// Rows longer than 15 s (resolution 1) cannot form a candidate, so the
/// result is empty there.
pub fn derive_arousals(stages: &[Stage], step: RowStep) -> Vec<EventInterval> {
    let (num, den) = (step.num, step.den);
    let fits = |rows: usize| rows as u64 * num <= 15 * den;
    let mut segs = wake_runs(stages);
    let mut i = 0;
    while i + 1 < segs.len() {
        let (a, b) = (segs[i], segs[i + 1]);
        let span = b.1 - a.0;
        let gap = b.0 - a.1;
        if 10 * gap < span && fits(span) {
            segs[i] = (a.0, b.1);
            segs.remove(i + 1);
            // The grown segment may now merge with its left neighbour.
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    // Rows overlapping the 10 s before onset.
    let lookback = (10 * den).div_ceil(num) as usize;
    let secs = step.seconds();
    let mut out = Vec::new();
    for (s, e) in segs {
        if stages[s.saturating_sub(lookback)..s].contains(&Stage::Wake) {
            continue;
        }
        let span = e - s;
        if span as u64 * num >= 3 * den && fits(span) {
            out.push(EventInterval {
                onset: s as f64 * secs,
                duration: span as f64 * secs,
                kind: EventKind::Candidate,
            });
        }
    }
    out
}

/// How "overlap relative to combined length" is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMeasure {
    /// Intersection over union.
    #[default]
    Union,
    /// Intersection over the summed lengths of both intervals.
    Summed,
}

pub fn overlap_ratio(a: &EventInterval, b: &EventInterval, measure: OverlapMeasure) -> f64 {
    let inter = (a.end().min(b.end()) - a.onset.max(b.onset)).max(0.0);
    let denom = match measure {
        OverlapMeasure::Union => a.duration + b.duration - inter,
        OverlapMeasure::Summed => a.duration + b.duration,
    };
    if denom > 0.0 {
        inter / denom
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(candidate, annotation, ratio)`
    pub matches: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// One-to-one greedy matching: pairs at or above `threshold`, taken in
/// descending ratio order (ties by candidate index, then annotation index).
pub fn iou_match(
    candidates: &[EventInterval],
    annotations: &[EventInterval],
    threshold: f64,
    measure: OverlapMeasure,
) -> MatchResult {
    let mut pairs = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        for (j, a) in annotations.iter().enumerate() {
            let v = overlap_ratio(c, a, measure);
            if v > 0.0 && v >= threshold {
                pairs.push((i, j, v));
            }
        }
    }
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_c = vec![false; candidates.len()];
    let mut used_a = vec![false; annotations.len()];
    let mut matches = Vec::new();
    for (i, j, v) in pairs {
        if !used_c[i] && !used_a[j] {
            used_c[i] = true;
            used_a[j] = true;
            matches.push((i, j, v));
        }
    }
    MatchResult {
        matches,
        false_positives: (0..candidates.len()).filter(|&i| !used_c[i]).collect(),
        false_negatives: (0..annotations.len()).filter(|&j| !used_a[j]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any of the three had a zero denominator and was reported as 0.
    pub undefined: bool,
}

pub fn iou_prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |n: usize, d: usize| if d == 0 { None } else { Some(n as f64 / d as f64) };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Prf {
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        undefined: p.is_none() || r.is_none(),
    }
}

impl MatchResult {
    pub fn prf(&self) -> Prf {
        iou_prf(self.matches.len(), self.false_positives.len(), self.false_negatives.len())
    }
}

/// Number of `(a, b, c)` stage triplets with `a != b` and `b != c`.
pub const TRIPLETS: usize = NUM_STAGES * (NUM_STAGES - 1) * (NUM_STAGES - 1);

/// Epochs per 1.5-h block.
pub const BLOCK_EPOCHS: usize = 180;

/// Lexicographic index of a qualifying triplet.
pub fn triplet_index(a: Stage, b: Stage, c: Stage) -> Option<usize> {
    if a == b || b == c {
        return None;
    }
    let (a, b, c) = (a.index(), b.index(), c.index());
    let bi = b - usize::from(b > a);
    let ci = c - usize::from(c > b);
    Some(a * 16 + bi * 4 + ci)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletFeatures {
    pub block: usize,
    /// Always `TRIPLETS` long.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripletResult {
    pub blocks: Vec<TripletFeatures>,
    /// The trimmed span holds no full block.
    pub too_short: bool,
}

/// Triplet counts per full 1.5-h block of the span between the first and
/// last non-Wake epoch of `trim_reference` (inclusive); the remainder is
/// dropped. `stages` holds `resolution` rows per reference epoch.
pub fn triplet_features(stages: &[Stage], resolution: usize, trim_reference: &[Label]) -> Result<TripletResult, HifreqError> {
    check_resolution(resolution)?;
    if stages.len() != trim_reference.len() * resolution {
        return Err(HifreqError::Length(format!(
            "{} rows at resolution {resolution} for {} reference epochs",
            stages.len(),
            trim_reference.len()
        )));
    }
    let sleep = |l: &Label| matches!(l, Some(s) if *s != Stage::Wake);
    let (Some(first), Some(last)) = (
        trim_reference.iter().position(sleep),
        trim_reference.iter().rposition(sleep),
    ) else {
        return Ok(TripletResult {
            blocks: Vec::new(),
            too_short: true,
        });
    };
    let span = &stages[first * resolution..(last + 1) * resolution];
    let block_rows = BLOCK_EPOCHS * resolution;
    let blocks: Vec<TripletFeatures> = span
        .chunks_exact(block_rows)
        .enumerate()
        .map(|(block, rows)| {
            let mut counts = vec![0u32; TRIPLETS];
            for w in rows.windows(3) {
                if let Some(k) = triplet_index(w[0], w[1], w[2]) {
                    counts[k] += 1;
                }
            }
            TripletFeatures { block, counts }
        })
        .collect();
    Ok(TripletResult {
        too_short: blocks.is_empty(),
        blocks,
    })
}

/// `recording_id,block_index,resolution,c0..c79`, one row per block.
pub fn features_csv_header() -> String {
    let mut h = String::from("recording_id,block_index,resolution");
    for i in 0..TRIPLETS {
        h.push_str(&format!(",c{i}"));
    }
    h.push('\n');
    h
}

pub fn features_csv_rows(recording_id: &str, resolution: usize, blocks: &[TripletFeatures]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&format!("{recording_id},{},{resolution}", b.block));
        for c in &b.counts {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Stage::*;

    const SEC: RowStep = RowStep { num: 1, den: 1 };

    fn ev(onset: f64, duration: f64) -> EventInterval {
        EventInterval::new(onset, duration, EventKind::Arousal).unwrap()
    }

    fn rows(pattern: &[(Stage, usize)]) -> Vec<Stage> {
        pattern.iter().flat_map(|&(s, n)| std::iter::repeat_n(s, n)).collect()
    }

    #[test]
    fn overlap_examples() {
        let r = RowStep { num: 1, den: 1 };
        let stages = rows(&[(Wake, 4), (N2, 26)]);
        let e = [ev(0.0, 10.0)];
        assert!((wake_overlap_fraction(&stages, r, &e).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(wake_overlap_fraction(&[Wake; 30], r, &e).unwrap(), 1.0);
        assert_eq!(wake_overlap_fraction(&[N1; 30], r, &e).unwrap(), 0.0);
        assert!(matches!(wake_overlap_fraction(&stages, r, &[]), Err(HifreqError::UndefinedFraction)));
        assert!(matches!(
            wake_overlap_fraction(&stages, r, &[ev(25.0, 10.0)]),
            Err(HifreqError::Coverage { .. })
        ));
    }

    #[test]
    fn merge_example_from_runs() {
        let out = derive_arousals(&rows(&[(Wake, 4), (N2, 1), (Wake, 7), (N2, 20)]), SEC);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].onset, out[0].duration), (0.0, 12.0));
        assert_eq!(out[0].kind, EventKind::Candidate);
    }

    #[test]
    fn long_and_absent_wake() {
        assert!(derive_arousals(&rows(&[(N2, 20), (Wake, 20), (N2, 5)]), SEC).is_empty());
        assert!(derive_arousals(&[N3; 60], SEC).is_empty());
        let coarse = RowStep::resolution(1).unwrap();
        assert!(derive_arousals(&[N2, Wake, N2], coarse).is_empty());
        // Same run at 2-s rows is kept.
        let fine = RowStep::resolution(16).unwrap();
        let out = derive_arousals(&rows(&[(N2, 10), (Wake, 3), (N2, 10)]), fine);
        assert_eq!((out[0].onset, out[0].duration), (18.75, 5.625));
    }

    #[test]
    fn lookback_uses_raw_wake() {
        // Wake 2 s, 6 s sleep, 5 s Wake: too far apart to merge, and the
        // first run sits inside the second one's look-back window.
        assert!(derive_arousals(&rows(&[(N2, 20), (Wake, 2), (N2, 6), (Wake, 5), (N2, 20)]), SEC).is_empty());
        assert_eq!(derive_arousals(&rows(&[(N2, 20), (Wake, 2), (N2, 10), (Wake, 5), (N2, 20)]), SEC).len(), 1);
    }

    #[test]
    fn iou_examples() {
        let m = iou_match(&[ev(0.0, 10.0)], &[ev(5.0, 10.0)], 0.2, OverlapMeasure::Union);
        assert_eq!(m.matches.len(), 1);
        assert!((m.matches[0].2 - 1.0 / 3.0).abs() < 1e-12);
        let m = iou_match(&[ev(0.0, 3.0)], &[ev(5.0, 3.0)], 0.2, OverlapMeasure::Union);
        assert_eq!((m.false_positives.len(), m.false_negatives.len()), (1, 1));
        let m = iou_match(&[ev(2.0, 4.0)], &[ev(2.0, 4.0)], 0.2, OverlapMeasure::Union);
        assert_eq!(m.matches[0].2, 1.0);
        // Summed lengths: 5 / 20 = 0.25.
        let m = iou_match(&[ev(0.0, 10.0)], &[ev(5.0, 10.0)], 0.2, OverlapMeasure::Summed);
        assert!((m.matches[0].2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn prf_examples() {
        assert_eq!(
            iou_prf(3, 0, 0),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                undefined: false
            }
        );
        let p = iou_prf(1, 1, 3);
        assert_eq!((p.precision, p.recall), (0.5, 0.25));
        assert!((p.f1 - 1.0 / 3.0).abs() < 1e-15);
        let p = iou_prf(0, 0, 0);
        assert!(p.undefined && p.f1 == 0.0 && p.precision == 0.0);
    }

    #[test]
    fn triplet_indexing() {
        let mut seen = [false; TRIPLETS];
        let mut last = None;
        for a in Stage::ALL {
            for b in Stage::ALL {
                for c in Stage::ALL {
                    if let Some(k) = triplet_index(a, b, c) {
                        assert!(!seen[k]);
                        seen[k] = true;
                        assert!(last.is_none_or(|l| k > l), "lexicographic");
                        last = Some(k);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(TRIPLETS, 80);
    }

    #[test]
    fn triplet_blocks() {
        let mut reference = vec![Some(Wake); 5];
        reference.extend(vec![Some(N2); 180]);
        reference.extend(vec![Some(Wake); 5]);
        let mut stages = vec![N2; 190];
        stages[5] = Wake;
        stages[6] = N1;
        stages[7] = Wake;
        stages[8] = N1;
        let res = triplet_features(&stages, 1, &reference).unwrap();
        assert_eq!(res.blocks.len(), 1);
        let counts = &res.blocks[0].counts;
        assert_eq!(counts.len(), 80);
        assert_eq!(counts[triplet_index(Wake, N1, Wake).unwrap()], 1);
        assert_eq!(counts[triplet_index(N1, Wake, N1).unwrap()], 1);
        // Trimmed span starts at row 5: W-N1-W, N1-W-N1, W-N1-N2.
        assert_eq!(counts.iter().sum::<u32>(), 3);
        let short = triplet_features(&stages[..100], 1, &reference[..100]).unwrap();
        assert!(short.too_short && short.blocks.is_empty());
        let constant = triplet_features(&[N3; 180], 1, &[Some(N3); 180]).unwrap();
        assert!(constant.blocks[0].counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn csv_layout() {
        let h = features_csv_header();
        assert!(h.starts_with("recording_id,block_index,resolution,c0,") && h.ends_with(",c79\n"));
        let row = features_csv_rows(
            "r",
            4,
            &[TripletFeatures {
                block: 2,
                counts: vec![1; 80],
            }],
        );
        assert_eq!(row.split(',').count(), 83);
    }
}
