use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::forward_multi;
use super::params::Parameters;
use super::ModelError;
use crate::numkernel::{Array, Backend, EvalBackend, NormLayout};

/// Scoring MLP of one attention module: `F -> hidden -> norm -> ReLU -> 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModule {
    pub fc1_w: Array,
    pub fc1_b: Array,
    pub gamma: Array,
    pub beta: Array,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub fc2_w: Array,
    pub fc2_b: Array,
    pub eps: f64,
}

impl AttentionModule {
    /// Seeded uniform fan-in initialization.
    pub fn init(features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
                .expect("shape matches length")
        };
        Self {
            fc1_w: uniform(&[hidden, features], features),
            fc1_b: uniform(&[hidden], features),
            gamma: Array::full(&[hidden], 1.0),
            beta: Array::zeros(&[hidden]),
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            fc2_w: uniform(&[1, hidden], hidden),
            fc2_b: uniform(&[1], hidden),
            eps: 1e-5,
        }
    }

    /// Module `j` of a model without a channel encoder.
    pub fn from_params(params: &Parameters, j: usize, eps: f64) -> Result<Self, ModelError> {
        let g = |s: &str| params.get(&format!("attn.{j}.{s}")).cloned();
        let (rm, rv) = params.running(&format!("attn.{j}.bn"))?;
        Ok(Self {
            fc1_w: g("fc1.w")?,
            fc1_b: g("fc1.b")?,
            gamma: g("bn.gamma")?,
            beta: g("bn.beta")?,
            running_mean: rm.to_vec(),
            running_var: rv.to_vec(),
            fc2_w: g("fc2.w")?,
            fc2_b: g("fc2.b")?,
            eps,
        })
    }
}

/// Fuses channel maps `m: [c, f, t]` into `m_agg: [f, t]` with weights `w: [c]`.
pub fn attention_fuse(module: &AttentionModule, m: &Array) -> Result<(Array, Array), ModelError> {
    let [c, f, t] = *m.shape() else {
        return Err(ModelError::Config(format!("expected [c, f, t], got {:?}", m.shape())));
    };
    if c == 0 {
        return Err(ModelError::EmptyChannels);
    }
    if t == 0 {
        return Err(ModelError::Config("attention input has no time steps".into()));
    }
    let mut be = EvalBackend;
    let hidden = module.fc1_w.shape()[0];
    let pooled = be.time_mean(m)?;
    let h = be.linear(&pooled, &module.fc1_w, &module.fc1_b)?;
    let h = be.reshape(&h, &[1, c, hidden])?;
    let running = if c < 2 {
        Some((module.running_mean.as_slice(), module.running_var.as_slice()))
    } else {
        None
    };
    let (h, _) = be.norm(&h, &module.gamma, &module.beta, NormLayout::Channel, running, module.eps)?;
    let h = be.relu(&h);
    let h = be.reshape(&h, &[c, hidden])?;
    let s = be.linear(&h, &module.fc2_w, &module.fc2_b)?;
    let s = be.reshape(&s, &[1, c])?;
    let w = be.softmax(&s)?;
    let agg = be.weighted_sum(m, &w)?;
    Ok((agg.reshape(&[f, t])?, w.reshape(&[c])?))
}

/// Mean attention weight per module and channel.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AttentionTrace {
    pub channels: Vec<String>,
    /// `weights[module][channel]`
    pub weights: Vec<Vec<f64>>,
    pub recordings: usize,
}

/// Runs every recording (`names`, `[c, t]` samples) through the model and
/// averages each module's weights over all invocations.
pub fn extract_attention_trace(
    cfg: &ModelConfig,
    params: &Parameters,
    recordings: &[(&[String], &Array)],
) -> Result<AttentionTrace, ModelError> {
    let Some((names, _)) = recordings.first() else {
        return Err(ModelError::Trace("no recordings".into()));
    };
    let names = names.to_vec();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut count = 0usize;
    for (i, (rec_names, data)) in recordings.iter().enumerate() {
        if *rec_names != names.as_slice() {
            return Err(ModelError::Trace(format!(
                "recording {i} has channels {rec_names:?}, expected {names:?}"
            )));
        }
        if data.shape().first() != Some(&names.len()) {
            return Err(ModelError::Trace(format!(
                "recording {i} has {:?} samples for {} channel names",
                data.shape(),
                names.len()
            )));
        }
        let (_, attn) = forward_multi(cfg, params, data, &[1])?;
        if sums.is_empty() {
            sums = vec![vec![0.0; names.len()]; attn.len()];
        }
        for (acc, w) in sums.iter_mut().zip(&attn) {
            for (a, v) in acc.iter_mut().zip(w.data()) {
                *a += v;
            }
        }
        count += 1;
    }
    for acc in &mut sums {
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
    }
    Ok(AttentionTrace {
        channels: names,
        weights: sums,
        recordings: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(c: usize, seed: u64) -> Array {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::new(vec![c, 6, 10], (0..c * 60).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn single_channel_passes_through() {
        let m = maps(1, 1);
        let module = AttentionModule::init(6, 40, 2);
        let (agg, w) = attention_fuse(&module, &m).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(agg.data(), m.data());
    }

    #[test]
    fn duplicated_channel_splits_evenly() {
        let one = maps(1, 3);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let m = Array::new(vec![2, 6, 10], data).unwrap();
        let (agg, w) = attention_fuse(&AttentionModule::init(6, 40, 4), &m).unwrap();
        assert_eq!(w.data(), &[0.5, 0.5]);
        for (a, b) in agg.data().iter().zip(one.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fused_map_is_a_convex_combination() {
        for seed in 0..10 {
            let m = maps(4, seed);
            let (agg, w) = attention_fuse(&AttentionModule::init(6, 40, seed + 100), &m).unwrap();
            assert!((w.sum() - 1.0).abs() <= 1e-12);
            let plane = 60;
            for i in 0..plane {
                let vals: Vec<f64> = (0..4).map(|c| m.data()[c * plane + i]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(agg.data()[i] >= lo - 1e-12 && agg.data()[i] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn no_channels_is_an_error() {
        let m = Array::zeros(&[0, 6, 10]);
        assert!(matches!(
            attention_fuse(&AttentionModule::init(6, 40, 0), &m),
            Err(ModelError::EmptyChannels)
        ));
    }
}
