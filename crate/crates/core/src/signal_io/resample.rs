//! Rational-rate polyphase resampling with a Kaiser-windowed sinc filter.
//!
//! The filter lives at the upsampled rate `up * rate_in`: cutoff
//! `0.9 * min(1/up, 1/down)` of Nyquist, `beta = 8.6`, half-width
//! `10 * max(up, down)` taps, each polyphase branch scaled to unit DC gain.
//! Output sample `m` is centred on input position `m * down / up`, and there
//! are `len * up / down` outputs rounded half up, so durations agree within
//! half an output sample. The signal is extended past both ends by odd reflection
//! (`2 x[0] - x[k]`), which keeps linear trends intact at the edges.

use super::SignalError;

pub const TARGET_RATE: usize = 128;

const BETA: f64 = 8.6;
const CUTOFF: f64 = 0.9;
const HALF_WIDTH: usize = 10;
const MAX_FACTOR: u64 = 1024;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(up, down)` in lowest terms with `rate_out / rate_in = up / down`, both
/// at most 1024.
pub fn rational_ratio(rate_in: f64, rate_out: f64) -> Result<(usize, usize), SignalError> {
    if !(rate_in > 0.0) || !rate_in.is_finite() || !(rate_out > 0.0) {
        return Err(SignalError::Resample(format!("rates must be positive, got {rate_in} -> {rate_out}")));
    }
    let ratio = rate_out / rate_in;
    for down in 1..=MAX_FACTOR {
        let up = (ratio * down as f64).round();
        if up >= 1.0 && ((up / down as f64) - ratio).abs() <= 1e-12 * ratio {
            let up = up as u64;
            let g = gcd(up, down);
            let (u, d) = (up / g, down / g);
            if u <= MAX_FACTOR {
                return Ok((u as usize, d as usize));
            }
        }
    }
    Err(SignalError::Resample(format!(
        "{rate_in} Hz -> {rate_out} Hz needs up/down factors above {MAX_FACTOR}"
    )))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn design(up: usize, down: usize) -> Vec<f64> {
    let half = HALF_WIDTH * up.max(down);
    let n = 2 * half + 1;
    let fc = CUTOFF / up.max(down) as f64;
    let norm = bessel_i0(BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - half as f64;
            let r = x / half as f64;
            let w = bessel_i0(BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
            let arg = std::f64::consts::PI * fc * x;
            let sinc = if x == 0.0 { 1.0 } else { arg.sin() / arg };
            fc * sinc * w
        })
        .collect();
    // Each polyphase branch gets unit DC gain.
    for phase in 0..up {
        let s: f64 = h.iter().skip(phase).step_by(up).sum();
        for v in h.iter_mut().skip(phase).step_by(up) {
            *v /= s;
        }
    }
    h
}

fn extended(x: &[f64], i: i64) -> f64 {
    let n = x.len() as i64;
    if i < 0 {
        let k = (-i).min(n - 1);
        2.0 * x[0] - x[k as usize]
    } else if i >= n {
        let k = (2 * (n - 1) - i).max(0);
        2.0 * x[n as usize - 1] - x[k as usize]
    } else {
        x[i as usize]
    }
}

/// Resamples by `up / down`.
pub fn resample_poly(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    if up == down {
        return x.to_vec();
    }
    if x.is_empty() {
        return Vec::new();
    }
    let h = design(up, down);
    let half = (h.len() / 2) as i64;
    let (up_i, down_i) = (up as i64, down as i64);
    let out_len = (2 * x.len() * up + down) / (2 * down);
    (0..out_len as i64)
        .map(|m| {
            // Upsampled-domain centre; input n contributes h[c - n*up + half].
            let c = m * down_i;
            let n_lo = (c - half).div_euclid(up_i) + i64::from((c - half).rem_euclid(up_i) != 0);
            let n_hi = (c + half).div_euclid(up_i);
            let mut acc = 0.0;
            for n in n_lo..=n_hi {
                acc += h[(c - n * up_i + half) as usize] * extended(x, n);
            }
            acc
        })
        .collect()
}

/// Resamples to 128 Hz.
pub fn resample_128(x: &[f64], rate_in: f64) -> Result<Vec<f64>, SignalError> {
    let (up, down) = rational_ratio(rate_in, TARGET_RATE as f64)?;
    Ok(resample_poly(x, up, down))
}
