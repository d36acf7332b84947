use super::SignalError;

/// Normalized samples are clipped to `[-CLIP, CLIP]`.
pub const CLIP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub samples: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
    /// The interquartile range was zero, so samples were only centred.
    pub degenerate: bool,
}

/// Quantile `q` of ascending `sorted` by linear interpolation between order
/// statistics at position `(n - 1) q` (the "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(x - median) / IQR`, clipped to `[-20, 20]`.
pub fn normalize_robust(x: &[f64]) -> Result<Normalized, SignalError> {
    if x.len() < 4 {
        return Err(SignalError::Config(format!("robust normalization needs >= 4 samples, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SignalError::Range("robust normalization needs finite samples".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let degenerate = iqr == 0.0;
    let scale = if degenerate { 1.0 } else { iqr };
    let samples = x.iter().map(|v| ((v - median) / scale).clamp(-CLIP, CLIP)).collect();
    Ok(Normalized {
        samples,
        median,
        iqr,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_example() {
        let n = normalize_robust(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(n.median, 2.5);
        assert_eq!(n.iqr, 1.5);
        let expected = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (a, b) in n.samples.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!n.degenerate);
    }

    #[test]
    fn constant_is_flagged() {
        let n = normalize_robust(&[7.0; 10]).unwrap();
        assert!(n.degenerate);
        assert!(n.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outliers_clip() {
        let mut x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        x[3] = 1e6;
        x[4] = -1e6;
        let n = normalize_robust(&x).unwrap();
        assert_eq!(n.samples[3], 20.0);
        assert_eq!(n.samples[4], -20.0);
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(normalize_robust(&[1.0, 2.0, 3.0]).is_err());
    }
}
