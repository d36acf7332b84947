//! Brute-force reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use anysleep::signal_io::{Channel, EventInterval, EventKind, Modality, Recording};
use anysleep::{Label, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Alternating Wake / sleep runs on 1-s rows.
pub fn random_timeline(rng: &mut ChaCha8Rng) -> Vec<Stage> {
    let target = rng.random_range(10..200);
    let mut out = Vec::new();
    while out.len() < target {
        let wake = rng.random_bool(0.5);
        let n = if wake { rng.random_range(1..10) } else { rng.random_range(1..14) };
        let s = if wake {
            Stage::Wake
        } else {
            Stage::from_index(rng.random_range(1..5)).unwrap()
        };
        out.extend(std::iter::repeat_n(s, n));
    }
    out
}

/// Rule pipeline on 1-s rows in seconds, merging by restarting the scan
/// from the left after every merge. Returns `(onset, end)` pairs.
pub fn oracle_arousals(stages: &[Stage]) -> Vec<(f64, f64)> {
    let wake: Vec<bool> = stages.iter().map(|s| *s == Stage::Wake).collect();
    let mut segs: Vec<(f64, f64)> = Vec::new();
    let mut t = 0;
    while t < wake.len() {
        if wake[t] {
            let s = t;
            while t < wake.len() && wake[t] {
                t += 1;
            }
            segs.push((s as f64, t as f64));
        } else {
            t += 1;
        }
    }
    'outer: loop {
        for k in 0..segs.len().saturating_sub(1) {
            let merged = segs[k + 1].1 - segs[k].0;
            let gap = segs[k + 1].0 - segs[k].1;
            if gap < 0.10 * merged && merged <= 15.0 {
                segs[k].1 = segs[k + 1].1;
                segs.remove(k + 1);
                continue 'outer;
            }
        }
        break;
    }
    segs.into_iter()
        .filter(|&(on, _)| {
            // any second in [on - 10, on) predicted Wake
            !(0..wake.len()).any(|i| {
                let (lo, hi) = (i as f64, i as f64 + 1.0);
                wake[i] && hi > (on - 10.0).max(0.0) && lo < on
            })
        })
        .filter(|&(on, off)| (3.0..=15.0).contains(&(off - on)))
        .collect()
}

pub fn random_events(rng: &mut ChaCha8Rng, n: usize) -> Vec<EventInterval> {
    (0..n)
        .map(|_| {
            let on = rng.random_range(0..60) as f64 * 0.5;
            let dur = rng.random_range(1..20) as f64 * 0.5;
            EventInterval::new(on, dur, EventKind::Arousal).unwrap()
        })
        .collect()
}

/// Repeatedly takes the best remaining pair by scanning all of them.
pub fn oracle_match(c: &[EventInterval], a: &[EventInterval], threshold: f64, summed: bool) -> Vec<(usize, usize)> {
    let ratio = |x: &EventInterval, y: &EventInterval| {
        let inter = (x.end().min(y.end()) - x.onset.max(y.onset)).max(0.0);
        let denom = if summed {
            x.duration + y.duration
        } else {
            // hull minus the gap between them
            x.end().max(y.end()) - x.onset.min(y.onset) - (y.onset.max(x.onset) - x.end().min(y.end())).max(0.0)
        };
        inter / denom
    };
    let mut free_c = vec![true; c.len()];
    let mut free_a = vec![true; a.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..c.len() {
            for j in 0..a.len() {
                if !free_c[i] || !free_a[j] {
                    continue;
                }
                let v = ratio(&c[i], &a[j]);
                if v > 0.0 && v >= threshold && best.is_none_or(|b| v > b.2) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        free_c[i] = false;
        free_a[j] = false;
        out.push((i, j));
    }
    out
}

/// Index by enumerating the qualifying triplets in lexicographic order.
pub fn oracle_triplet_index(x: Stage, y: Stage, z: Stage) -> usize {
    let mut k = 0;
    for a in Stage::ALL {
        for b in Stage::ALL {
            for c in Stage::ALL {
                if a != b && b != c {
                    if (a, b, c) == (x, y, z) {
                        return k;
                    }
                    k += 1;
                }
            }
        }
    }
    unreachable!("not a qualifying triplet")
}

pub struct TripletCase {
    pub resolution: usize,
    pub stages: Vec<Stage>,
    pub reference: Vec<Label>,
}

pub fn random_triplet_case(rng: &mut ChaCha8Rng) -> TripletCase {
    let resolution = [1, 2, 4][rng.random_range(0..3)];
    let epochs = rng.random_range(150..420);
    let lead = rng.random_range(0..20);
    let tail = rng.random_range(0..20);
    let reference = (0..epochs)
        .map(|i| {
            if i < lead || i + tail >= epochs {
                Some(Stage::Wake)
            } else {
                Stage::from_index(rng.random_range(0..5))
            }
        })
        .collect();
    let stages = (0..epochs * resolution)
        .map(|_| Stage::from_index(rng.random_range(0..5)).unwrap())
        .collect();
    TripletCase {
        resolution,
        stages,
        reference,
    }
}

/// Per-block counts by a direct triple loop.
pub fn oracle_triplets(case: &TripletCase) -> Vec<Vec<u32>> {
    let r = case.resolution;
    let sleep: Vec<usize> = (0..case.reference.len())
        .filter(|&i| case.reference[i].is_some_and(|s| s != Stage::Wake))
        .collect();
    let (Some(&first), Some(&last)) = (sleep.first(), sleep.last()) else {
        return Vec::new();
    };
    let blocks = (last - first + 1) / 180;
    (0..blocks)
        .map(|b| {
            let lo = (first + b * 180) * r;
            let hi = lo + 180 * r;
            let mut counts = vec![0u32; 80];
            for i in lo..hi - 2 {
                let (x, y, z) = (case.stages[i], case.stages[i + 1], case.stages[i + 2]);
                if x != y && y != z {
                    counts[oracle_triplet_index(x, y, z)] += 1;
                }
            }
            counts
        })
        .collect()
}

/// Per-stage F1 from explicit set membership; `None` when nothing is scored.
pub fn oracle_mf1(pred: &[Stage], truth: &[Label], zero: bool) -> Option<f64> {
    let scored: Vec<(Stage, Stage)> = pred
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| t.map(|t| (*p, t)))
        .collect();
    if scored.is_empty() {
        return None;
    }
    let mut f1s = Vec::new();
    for s in Stage::ALL {
        let tp = scored.iter().filter(|(p, t)| *p == s && *t == s).count() as f64;
        let fp = scored.iter().filter(|(p, t)| *p == s && *t != s).count() as f64;
        let fn_ = scored.iter().filter(|(p, t)| *p != s && *t == s).count() as f64;
        if tp + fp + fn_ == 0.0 {
            if zero {
                f1s.push(0.0);
            }
            continue;
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        f1s.push(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        });
    }
    Some(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Random predictions over the first `k` stages with ~10 % excluded truth.
pub fn random_labels(rng: &mut ChaCha8Rng) -> (Vec<Stage>, Vec<Label>) {
    let n = rng.random_range(1..60);
    let k = rng.random_range(1..=5);
    let pred = (0..n).map(|_| Stage::from_index(rng.random_range(0..k)).unwrap()).collect();
    let truth = (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                None
            } else {
                Stage::from_index(rng.random_range(0..k))
            }
        })
        .collect();
    (pred, truth)
}

/// Mixed-rate EEG/EOG recording with random scale and offset per channel.
pub fn random_recording(seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ch = rng.random_range(1..5);
    let records = rng.random_range(1..6);
    let channels = (0..n_ch)
        .map(|c| {
            let rate = [1.0, 8.0, 64.0, 100.0, 128.0, 256.0][rng.random_range(0..6)];
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let offset = rng.random_range(-1.0..1.0) * scale;
            Channel {
                name: if c % 2 == 0 { format!("EEG {c}") } else { format!("EOG {c}") },
                modality: if c % 2 == 0 { Modality::Eeg } else { Modality::Eog },
                rate,
                samples: (0..records * rate as usize)
                    .map(|_| offset + scale * rng.random_range(-1.0..1.0))
                    .collect(),
            }
        })
        .collect();
    Recording {
        id: format!("rec{seed}"),
        channels,
    }
}
