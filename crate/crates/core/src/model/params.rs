use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Fusion, ModelConfig};
use super::ModelError;
use crate::numkernel::Array;
use crate::stage::NUM_STAGES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Layout {
    params: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl Layout {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        let fan_in = cin * k;
        self.params.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![cout, cin, k],
            kind: ParamKind::Weight { fan_in },
        });
        self.params.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![cout],
            kind: ParamKind::Bias { fan_in },
        });
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) {
        self.params.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![out, inp],
            kind: ParamKind::Weight { fan_in: inp },
        });
        self.params.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![out],
            kind: ParamKind::Bias { fan_in: inp },
        });
    }

    fn norm(&mut self, name: &str, features: usize) {
        self.params.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![features],
            kind: ParamKind::Gamma,
        });
        self.params.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![features],
            kind: ParamKind::Beta,
        });
        self.norms.push((name.to_string(), features));
    }

    /// Optional channel encoder followed by the scoring MLP.
    fn attention(&mut self, cfg: &ModelConfig, j: usize, features: usize, encoder_input: Option<usize>) {
        let mut f = features;
        if let Some(cin) = encoder_input {
            let ce = &cfg.channel_encoder;
            self.conv(&format!("attn.{j}.enc.conv1"), ce.filters, cin, ce.kernels[0]);
            self.norm(&format!("attn.{j}.enc.bn"), ce.filters);
            self.conv(&format!("attn.{j}.enc.conv2"), ce.filters, ce.filters, ce.kernels[1]);
            f = ce.filters;
        }
        let h = cfg.attention_hidden;
        self.linear(&format!("attn.{j}.fc1"), h, f);
        self.norm(&format!("attn.{j}.bn"), h);
        self.linear(&format!("attn.{j}.fc2"), 1, h);
    }

    fn block(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        self.conv(&format!("{name}.conv"), cout, cin, k);
        self.norm(&format!("{name}.bn"), cout);
    }
}

fn build_layout(cfg: &ModelConfig) -> Layout {
    let mut l = Layout::default();
    let d = cfg.depth;
    let f = &cfg.filters;
    let k = &cfg.kernel_sizes;
    if cfg.fusion == Fusion::Early {
        for j in 0..cfg.heads {
            l.attention(cfg, j, 0, Some(1));
        }
    }
    let mut cin = if cfg.fusion == Fusion::Early { cfg.heads } else { 1 };
    for i in 0..d {
        l.block(&format!("enc.{i}"), f[i], cin, k[i]);
        cin = f[i];
    }
    l.block("conn", f[d], f[d - 1], k[d]);
    for i in (0..d).rev() {
        l.block(&format!("dec.{i}.up"), f[i], f[i + 1], k[i]);
        l.block(&format!("dec.{i}.merge"), f[i], 2 * f[i], k[i]);
    }
    if cfg.fusion == Fusion::Mid {
        for j in 0..=d {
            l.attention(cfg, j, f[j], None);
        }
    }
    if cfg.fusion == Fusion::Late {
        l.attention(cfg, 0, 0, Some(f[0]));
    }
    l.conv("cls.conv1", f[0], f[0], 1);
    l.conv("cls.conv2", NUM_STAGES, f[0], 1);
    l
}

/// Every learnable tensor of a configuration, in initialization order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    build_layout(cfg).params
}

/// Names and widths of every normalization layer.
pub fn norm_layers(cfg: &ModelConfig) -> Vec<(String, usize)> {
    build_layout(cfg).norms
}

/// Exact number of learnable scalars.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    parameter_layout(cfg).iter().map(ParamSpec::len).sum()
}

/// Learnable scalars split between attention modules and everything else.
pub fn count_attention_parameters(cfg: &ModelConfig) -> usize {
    parameter_layout(cfg)
        .iter()
        .filter(|p| p.name.starts_with("attn."))
        .map(ParamSpec::len)
        .sum()
}

/// Learnable arrays plus normalization running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    values: BTreeMap<String, Array>,
    buffers: BTreeMap<String, Array>,
}

impl Parameters {
    /// Seeded uniform fan-in initialization; gammas 1, betas 0, running
    /// means 0 and running variances 1.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = build_layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = BTreeMap::new();
        for spec in &layout.params {
            let n = spec.len();
            let data = match spec.kind {
                ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                ParamKind::Gamma => vec![1.0; n],
                ParamKind::Beta => vec![0.0; n],
            };
            values.insert(spec.name.clone(), Array::new(spec.shape.clone(), data)?);
        }
        let mut buffers = BTreeMap::new();
        for (name, width) in &layout.norms {
            buffers.insert(format!("{name}.running_mean"), Array::zeros(&[*width]));
            buffers.insert(format!("{name}.running_var"), Array::full(&[*width], 1.0));
        }
        Ok(Self { values, buffers })
    }

    /// Assembles parameters from named arrays, checking them against the
    /// layout of `cfg`.
    pub fn from_named(
        cfg: &ModelConfig,
        values: BTreeMap<String, Array>,
        buffers: BTreeMap<String, Array>,
    ) -> Result<Self, ModelError> {
        let layout = build_layout(cfg);
        if values.len() != layout.params.len() || buffers.len() != 2 * layout.norms.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters and {} buffers, found {} and {}",
                layout.params.len(),
                2 * layout.norms.len(),
                values.len(),
                buffers.len()
            )));
        }
        for spec in &layout.params {
            match values.get(&spec.name) {
                Some(a) if a.shape() == spec.shape.as_slice() => {}
                Some(a) => {
                    return Err(ModelError::Checkpoint(format!(
                        "{} has shape {:?}, expected {:?}",
                        spec.name,
                        a.shape(),
                        spec.shape
                    )))
                }
                None => return Err(ModelError::MissingParameter(spec.name.clone())),
            }
        }
        for (name, width) in &layout.norms {
            for suffix in ["running_mean", "running_var"] {
                let key = format!("{name}.{suffix}");
                match buffers.get(&key) {
                    Some(a) if a.shape() == [*width] => {}
                    _ => return Err(ModelError::MissingParameter(key)),
                }
            }
        }
        Ok(Self { values, buffers })
    }

    pub fn get(&self, name: &str) -> Result<&Array, ModelError> {
        self.values
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.values.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&Array, ModelError> {
        self.buffers
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    /// `(running_mean, running_var)` of normalization layer `norm`.
    pub fn running(&self, norm: &str) -> Result<(&[f64], &[f64]), ModelError> {
        Ok((
            self.buffer(&format!("{norm}.running_mean"))?.data(),
            self.buffer(&format!("{norm}.running_var"))?.data(),
        ))
    }

    /// Folds batch statistics into the running estimates:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply_norm_update(&mut self, update: &NormUpdate, momentum: f64) -> Result<(), ModelError> {
        for (suffix, batch) in [("running_mean", &update.mean), ("running_var", &update.var)] {
            let key = format!("{}.{suffix}", update.name);
            let buf = self
                .buffers
                .get_mut(&key)
                .ok_or_else(|| ModelError::MissingParameter(key.clone()))?;
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.values.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total learnable scalars held.
    pub fn count(&self) -> usize {
        self.values.values().map(Array::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().chain(self.buffers.values()).all(Array::all_finite)
    }
}

/// Batch statistics of one normalization layer from a training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormUpdate {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}
