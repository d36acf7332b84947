//! Synthetic PSG: a Markov-chain hypnogram rendered into EEG/EOG signals
//! with stage-specific spectral templates, plus injected arousals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Channel, EventInterval, EventKind, Hypnogram, Modality, Recording, SignalError};
use crate::stage::{Label, Stage};

/// Epoch-to-epoch stage transitions, rows and columns in `Stage` order.
pub const TRANSITIONS: [[f64; 5]; 5] = [
    [0.75, 0.15, 0.05, 0.00, 0.05],
    [0.08, 0.45, 0.35, 0.00, 0.12],
    [0.03, 0.05, 0.60, 0.22, 0.10],
    [0.02, 0.00, 0.26, 0.72, 0.00],
    [0.07, 0.10, 0.11, 0.00, 0.72],
];

const EEG_NAMES: [&str; 6] = ["EEG C3-M2", "EEG C4-M1", "EEG F3-M2", "EEG F4-M1", "EEG O1-M2", "EEG O2-M1"];
const EOG_NAMES: [&str; 2] = ["EOG E1-M2", "EOG E2-M1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_eeg: usize,
    pub n_eog: usize,
    pub epochs: usize,
    /// Expected injected arousals per hour.
    pub arousal_rate: f64,
    /// Output sampling rate in Hz; `30 * rate` must be whole.
    pub rate: f64,
    /// Probability that an epoch carries an artifact and is excluded.
    pub artifact_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_eeg: 2,
            n_eog: 1,
            epochs: 120,
            arousal_rate: 10.0,
            rate: 128.0,
            artifact_prob: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::Config(m.to_string()));
        if self.n_eeg + self.n_eog == 0 {
            return bad("at least one channel is required");
        }
        if self.epochs < 2 {
            return bad("at least two epochs are required");
        }
        if !(self.arousal_rate >= 0.0) || !self.arousal_rate.is_finite() {
            return bad("arousal rate must be finite and >= 0");
        }
        if !(self.rate > 0.0) || (self.rate * 30.0).fract() != 0.0 || self.rate.fract() != 0.0 {
            return bad("rate must be a positive whole number of Hz");
        }
        if !(0.0..1.0).contains(&self.artifact_prob) {
            return bad("artifact probability must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Band-limited noise as a sum of sinusoids with random frequencies and
/// phases, generated by phasor rotation.
fn band(rng: &mut ChaCha8Rng, out: &mut [f64], rate: f64, lo: f64, hi: f64, rms: f64) {
    const K: usize = 5;
    let amp = rms * (2.0 / K as f64).sqrt();
    for _ in 0..K {
        let f = rng.random_range(lo..hi);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let w = std::f64::consts::TAU * f / rate;
        let (dr, di) = (w.cos(), w.sin());
        let (mut re, mut im) = (phase.cos(), phase.sin());
        for v in out.iter_mut() {
            *v += amp * im;
            let r = re * dr - im * di;
            im = re * di + im * dr;
            re = r;
        }
    }
}

fn white(rng: &mut ChaCha8Rng, out: &mut [f64], sd: f64) {
    let n = Normal::new(0.0, sd).expect("positive sd");
    for v in out.iter_mut() {
        *v += n.sample(rng);
    }
}

/// Adds `amp * shape((t - at) / width)` for a shape on `[0, 1)`.
fn transient(out: &mut [f64], rate: f64, at: f64, width: f64, amp: f64, shape: impl Fn(f64) -> f64) {
    let start = (at * rate).max(0.0) as usize;
    let len = (width * rate) as usize;
    for i in start..(start + len).min(out.len()) {
        let u = (i - start) as f64 / len as f64;
        out[i] += amp * shape(u);
    }
}

fn hann(u: f64) -> f64 {
    0.5 - 0.5 * (std::f64::consts::TAU * u).cos()
}

/// Cortical activity of one epoch.
fn eeg_template(rng: &mut ChaCha8Rng, stage: Stage, rate: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let secs = n as f64 / rate;
    match stage {
        Stage::Wake => {
            band(rng, &mut x, rate, 8.0, 12.0, 16.0);
            band(rng, &mut x, rate, 16.0, 30.0, 7.0);
            white(rng, &mut x, 4.0);
        }
        Stage::N1 => {
            band(rng, &mut x, rate, 4.0, 7.0, 9.0);
            band(rng, &mut x, rate, 8.0, 10.0, 3.0);
            for _ in 0..rng.random_range(0..3) {
                let at = rng.random_range(0.0..secs - 0.4);
                transient(&mut x, rate, at, 0.3, -35.0, |u| (std::f64::consts::PI * u).sin());
            }
        }
        Stage::N2 => {
            band(rng, &mut x, rate, 4.0, 7.0, 10.0);
            band(rng, &mut x, rate, 1.0, 2.0, 8.0);
            for _ in 0..rng.random_range(2..5) {
                let width = rng.random_range(0.5..1.5);
                let at = rng.random_range(0.0..secs - width);
                let f = rng.random_range(12.0..14.0);
                transient(&mut x, rate, at, width, 25.0, |u| {
                    hann(u) * (std::f64::consts::TAU * f * u * width).sin()
                });
            }
            for _ in 0..rng.random_range(0..3) {
                let width = rng.random_range(0.6..1.0);
                let at = rng.random_range(0.0..secs - width);
                transient(&mut x, rate, at, width, -70.0, |u| (std::f64::consts::TAU * u).sin());
            }
        }
        Stage::N3 => {
            band(rng, &mut x, rate, 0.5, 2.0, 45.0);
            band(rng, &mut x, rate, 4.0, 7.0, 5.0);
        }
        Stage::Rem => {
            band(rng, &mut x, rate, 4.0, 8.0, 10.0);
            band(rng, &mut x, rate, 8.0, 10.0, 4.0);
            for _ in 0..rng.random_range(0..3) {
                let width = rng.random_range(1.0..2.5);
                let at = rng.random_range(0.0..secs - width);
                let f = rng.random_range(2.0..4.0);
                // Sawtooth wave train.
                transient(&mut x, rate, at, width, 20.0, |u| hann(u) * (2.0 * (f * u * width).fract() - 1.0));
            }
        }
    }
    white(rng, &mut x, 2.0);
    x
}

/// Eye movements of one epoch; EOG channels see it with alternating sign.
fn eye_template(rng: &mut ChaCha8Rng, stage: Stage, rate: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let secs = n as f64 / rate;
    match stage {
        Stage::Wake => {
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0.0..secs - 0.4);
                transient(&mut x, rate, at, 0.3, 110.0, hann);
            }
        }
        Stage::N1 => band(rng, &mut x, rate, 0.2, 0.5, 30.0),
        Stage::Rem => {
            for _ in 0..rng.random_range(2..7) {
                let at = rng.random_range(0.0..secs - 0.7);
                let amp = rng.random_range(80.0..150.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                transient(&mut x, rate, at, 0.6, amp, |u| if u < 0.15 { u / 0.15 } else { (1.0 - u) / 0.85 });
            }
        }
        Stage::N2 | Stage::N3 => {}
    }
    x
}

fn markov(rng: &mut ChaCha8Rng, epochs: usize) -> Vec<Stage> {
    let mut s = Stage::Wake;
    let mut out = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        out.push(s);
        let u: f64 = rng.random();
        let row = &TRANSITIONS[s.index()];
        let mut acc = 0.0;
        let mut next = Stage::Rem;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = Stage::from_index(j).expect("five stages");
                break;
            }
        }
        s = next;
    }
    out
}

/// Places up to `count` non-overlapping arousals inside sleep: each lies in
/// scored non-Wake epochs, is preceded by at least 10 s of such epochs and
/// keeps 10 s away from other arousals. Events that find no room after 200
/// attempts are dropped.
fn place_arousals(rng: &mut ChaCha8Rng, labels: &[Label], count: usize) -> Vec<(f64, f64)> {
    let asleep = |a: f64, b: f64| {
        let first = (a / 30.0).floor() as usize;
        let last = ((b / 30.0).ceil() as usize).min(labels.len());
        a >= 0.0 && (first..last).all(|e| matches!(labels[e], Some(s) if s != Stage::Wake))
    };
    let total = labels.len() as f64 * 30.0;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for _ in 0..count {
        let duration = (rng.random_range(3.0..15.0) * 4.0f64).round() / 4.0;
        for _ in 0..200 {
            let onset = (rng.random_range(10.0..total - duration) * 4.0f64).round() / 4.0;
            let end = onset + duration;
            if asleep(onset - 10.0, end) && out.iter().all(|&(o, d)| end + 10.0 <= o || onset >= o + d + 10.0) {
                out.push((onset, duration));
                break;
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Generates one recording, its hypnogram and the injected arousal events.
/// Output is a pure function of `(seed, spec)`.
pub fn synth_generate(
    seed: u64,
    spec: &SynthSpec,
) -> Result<(Recording, Hypnogram, Vec<EventInterval>), SignalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = spec.rate;
    let per_epoch = (30.0 * rate) as usize;
    let total = per_epoch * spec.epochs;

    let stages = markov(&mut rng, spec.epochs);
    let labels: Vec<Label> = stages
        .iter()
        .map(|&s| if rng.random_bool(spec.artifact_prob) { None } else { Some(s) })
        .collect();
    let hours = spec.epochs as f64 * 30.0 / 3600.0;
    let count = if spec.arousal_rate > 0.0 {
        Poisson::new(spec.arousal_rate * hours).expect("positive mean").sample(&mut rng) as usize
    } else {
        0
    };
    let arousals = place_arousals(&mut rng, &labels, count);

    let n_ch = spec.n_eeg + spec.n_eog;
    let gains: Vec<f64> = (0..n_ch).map(|_| rng.random_range(0.8..1.2)).collect();
    let mut signals = vec![vec![0.0; total]; n_ch];
    for (e, &stage) in stages.iter().enumerate() {
        let span = e * per_epoch..(e + 1) * per_epoch;
        let common = eeg_template(&mut rng, stage, rate, per_epoch);
        let eye = eye_template(&mut rng, stage, rate, per_epoch);
        for (c, sig) in signals.iter_mut().enumerate() {
            let own = eeg_template(&mut rng, stage, rate, per_epoch);
            let mut noise = vec![0.0; per_epoch];
            white(&mut rng, &mut noise, 3.0);
            let out = &mut sig[span.clone()];
            if c < spec.n_eeg {
                for i in 0..per_epoch {
                    out[i] = gains[c] * common[i] + 0.4 * own[i] + 0.1 * eye[i] + noise[i];
                }
            } else {
                let sign = if (c - spec.n_eeg).is_multiple_of(2) { 1.0 } else { -1.0 };
                for i in 0..per_epoch {
                    out[i] = 0.3 * gains[c] * common[i] + sign * eye[i] + noise[i];
                }
            }
        }
        if labels[e].is_none() {
            for sig in signals.iter_mut() {
                let mut art = vec![0.0; per_epoch];
                band(&mut rng, &mut art, rate, 0.1, 3.0, 120.0);
                white(&mut rng, &mut art, 30.0);
                for (v, a) in sig[span.clone()].iter_mut().zip(art) {
                    *v += a;
                }
            }
        }
    }

    // Arousals cross-fade into wake activity with 0.5-s ramps.
    for &(onset, duration) in &arousals {
        let start = (onset * rate).round() as usize;
        let len = (duration * rate).round() as usize;
        let ramp = (0.5 * rate) as usize;
        let wake = eeg_template(&mut rng, Stage::Wake, rate, len);
        for (c, sig) in signals.iter_mut().enumerate() {
            let scale = if c < spec.n_eeg { gains[c] } else { 0.3 * gains[c] };
            for i in 0..len.min(total - start) {
                let g = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
                let v = &mut sig[start + i];
                *v = (1.0 - 0.7 * g) * *v + g * scale * wake[i];
            }
        }
    }

    let channels = signals
        .into_iter()
        .enumerate()
        .map(|(c, samples)| {
            let (name, modality) = if c < spec.n_eeg {
                (EEG_NAMES.get(c).map_or_else(|| format!("EEG {}", c + 1), |s| s.to_string()), Modality::Eeg)
            } else {
                let k = c - spec.n_eeg;
                (EOG_NAMES.get(k).map_or_else(|| format!("EOG {}", k + 1), |s| s.to_string()), Modality::Eog)
            };
            Channel {
                name,
                modality,
                rate,
                samples,
            }
        })
        .collect();
    let events = arousals
        .into_iter()
        .map(|(o, d)| EventInterval::new(o, d, EventKind::Arousal))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        Recording {
            id: format!("synth-{seed}"),
            channels,
        },
        Hypnogram::new(labels),
        events,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_rows_are_distributions() {
        for row in TRANSITIONS {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_channels_is_a_config_error() {
        let spec = SynthSpec {
            n_eeg: 0,
            n_eog: 0,
            ..Default::default()
        };
        assert!(matches!(synth_generate(1, &spec), Err(SignalError::Config(_))));
    }

    #[test]
    fn arousals_sit_inside_sleep() {
        let spec = SynthSpec {
            arousal_rate: 30.0,
            ..Default::default()
        };
        let (_, h, ev) = synth_generate(5, &spec).unwrap();
        assert!(!ev.is_empty());
        for e in &ev {
            assert!((3.0..=15.0).contains(&e.duration));
            let first = ((e.onset - 10.0) / 30.0).floor() as usize;
            let last = (e.end() / 30.0).ceil() as usize;
            for l in &h.labels[first..last] {
                assert!(matches!(l, Some(s) if *s != Stage::Wake));
            }
        }
    }
}
