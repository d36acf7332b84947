use serde::{Deserialize, Serialize};

use super::ModelError;

/// Predictions per 30-s epoch the classifier can produce.
pub const RESOLUTIONS: [usize; 14] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 384, 640, 960, 1920, 3840];

/// Samples per 30-s epoch at the model input rate.
pub const EPOCH_SAMPLES: usize = 3840;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Attention modules in front of the first encoder block.
    Early,
    /// One module per skip connection plus one on the connector.
    Mid,
    /// One module after the last decoder block.
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEncoderConfig {
    pub filters: usize,
    pub kernels: [usize; 2],
    pub strides: [usize; 2],
}

impl Default for ChannelEncoderConfig {
    fn default() -> Self {
        Self {
            filters: 32,
            kernels: [64, 9],
            strides: [32, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder (and decoder) block count.
    pub depth: usize,
    /// `depth + 1` filter counts: one per encoder block, then the connector.
    pub filters: Vec<usize>,
    /// `depth + 1` kernel sizes; decoder block `i` reuses entry `i`.
    pub kernel_sizes: Vec<usize>,
    /// Max-pooling factor after each encoder block.
    pub pool_factors: Vec<usize>,
    pub fusion: Fusion,
    pub heads: usize,
    pub attention_hidden: usize,
    pub channel_encoder: ChannelEncoderConfig,
    /// Classifier output resolution when none is requested explicitly.
    pub resolution: usize,
    pub sample_rate: usize,
    pub norm_eps: f64,
    pub norm_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(Fusion::Mid)
    }
}

/// Filters growing by a factor of sqrt(2) per block, rounded.
pub fn filter_schedule(base: usize, depth: usize) -> Vec<usize> {
    (0..=depth)
        .map(|i| (base as f64 * 2f64.sqrt().powi(i as i32)).round() as usize)
        .collect()
}

impl ModelConfig {
    /// Desk-scale defaults: depth 4, base 8 filters, kernel 9.
    pub fn desk(fusion: Fusion) -> Self {
        Self::with_shape(4, 8, fusion)
    }

    pub fn with_shape(depth: usize, base_filters: usize, fusion: Fusion) -> Self {
        Self {
            depth,
            filters: filter_schedule(base_filters, depth),
            kernel_sizes: vec![9; depth + 1],
            pool_factors: vec![2; depth],
            fusion,
            heads: if fusion == Fusion::Early { 4 } else { 1 },
            attention_hidden: 40,
            channel_encoder: ChannelEncoderConfig::default(),
            resolution: 1,
            sample_rate: 128,
            norm_eps: 1e-5,
            norm_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.filters.len() != self.depth + 1 || self.kernel_sizes.len() != self.depth + 1 {
            return bad(format!(
                "filters and kernel_sizes need depth + 1 = {} entries",
                self.depth + 1
            ));
        }
        if self.pool_factors.len() != self.depth {
            return bad(format!("pool_factors needs {} entries", self.depth));
        }
        if self.filters.iter().chain(&self.kernel_sizes).any(|&v| v == 0) {
            return bad("filters and kernel sizes must be positive".into());
        }
        if self.pool_factors.iter().any(|&p| !(1..=255).contains(&p)) {
            return bad("pool factors must lie in 1..=255".into());
        }
        if self.heads == 0 {
            return bad("at least one attention head is required".into());
        }
        if self.fusion != Fusion::Early && self.heads != 1 {
            return bad("multi-head attention is only defined for early fusion".into());
        }
        if self.attention_hidden == 0 || self.channel_encoder.filters == 0 {
            return bad("attention widths must be positive".into());
        }
        if self.sample_rate * 30 != EPOCH_SAMPLES {
            return bad(format!("the model runs at {} Hz", EPOCH_SAMPLES / 30));
        }
        if !(self.norm_eps > 0.0) || !(0.0..=1.0).contains(&self.norm_momentum) {
            return bad("norm_eps must be positive and norm_momentum in [0, 1]".into());
        }
        check_resolution(self.resolution)?;
        Ok(())
    }

    /// Number of attention modules.
    pub fn attention_modules(&self) -> usize {
        match self.fusion {
            Fusion::Early => self.heads,
            Fusion::Mid => self.depth + 1,
            Fusion::Late => 1,
        }
    }

    /// Input lengths must be a multiple of this many samples.
    pub fn required_multiple(&self) -> usize {
        let pool: usize = self.pool_factors.iter().product();
        let mut m = lcm(EPOCH_SAMPLES, pool);
        if self.fusion != Fusion::Mid {
            m = lcm(m, self.channel_encoder.strides.iter().product());
        }
        m
    }

    pub fn check_length(&self, samples: usize) -> Result<(), ModelError> {
        let m = self.required_multiple();
        if samples == 0 || !samples.is_multiple_of(m) {
            return Err(ModelError::Alignment {
                samples,
                required_multiple: m,
            });
        }
        Ok(())
    }
}

pub fn check_resolution(r: usize) -> Result<(), ModelError> {
    if RESOLUTIONS.contains(&r) {
        Ok(())
    } else {
        Err(ModelError::UnsupportedResolution(r))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_schedule() {
        assert_eq!(filter_schedule(8, 4), vec![8, 11, 16, 23, 32]);
        let c = ModelConfig::desk(Fusion::Mid);
        c.validate().unwrap();
        assert_eq!(c.attention_modules(), 5);
        assert_eq!(ModelConfig::with_shape(12, 8, Fusion::Mid).attention_modules(), 13);
        assert_eq!(ModelConfig::desk(Fusion::Early).heads, 4);
    }

    #[test]
    fn resolutions_divide_an_epoch() {
        for r in RESOLUTIONS {
            assert_eq!(EPOCH_SAMPLES % r, 0);
        }
        assert!(check_resolution(3).is_err());
    }

    #[test]
    fn alignment_multiple() {
        let c = ModelConfig::desk(Fusion::Mid);
        assert_eq!(c.required_multiple(), 3840);
        let deep = ModelConfig::with_shape(12, 8, Fusion::Mid);
        assert_eq!(deep.required_multiple(), 15 * 4096);
        assert!(matches!(
            deep.check_length(3840),
            Err(ModelError::Alignment { required_multiple: 61440, .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk(Fusion::Mid);
        c.depth = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(Fusion::Mid);
        c.heads = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(Fusion::Late);
        c.filters.pop();
        assert!(c.validate().is_err());
    }
}
