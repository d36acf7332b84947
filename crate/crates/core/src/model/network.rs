use super::config::{check_resolution, Fusion, ModelConfig, EPOCH_SAMPLES};
use super::params::{NormUpdate, Parameters};
use super::ModelError;
use crate::numkernel::{Array, Backend, EvalBackend, NormLayout, Padding};
use crate::stage::{Stage, NUM_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalization uses batch statistics and reports them.
    Train,
    /// Normalization uses running statistics (attention modules with two or
    /// more channels still normalize over the channel axis).
    Eval,
}

/// Output of the network up to the segment classifier's pooling layer.
pub struct Features<V> {
    /// Classifier map at the input sample rate, `[b, 5, t]`.
    pub logits: V,
    /// Attention weights `[b, c]` per module, in module order.
    pub attention: Vec<Array>,
    /// Batch statistics of every normalization layer (train mode only).
    pub norm_updates: Vec<NormUpdate>,
}

struct Net<'a, B: Backend> {
    be: &'a mut B,
    cfg: &'a ModelConfig,
    params: &'a Parameters,
    mode: Mode,
    updates: Vec<NormUpdate>,
    attention: Vec<Array>,
}

impl<B: Backend> Net<'_, B> {
    fn p(&mut self, name: &str) -> Result<B::V, ModelError> {
        let a = self.params.get(name)?;
        Ok(self.be.param(name, a))
    }

    fn conv(&mut self, name: &str, x: &B::V, stride: usize) -> Result<B::V, ModelError> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        Ok(self.be.conv1d(x, &w, &b, stride, Padding::Same)?)
    }

    fn linear(&mut self, name: &str, x: &B::V) -> Result<B::V, ModelError> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        Ok(self.be.linear(x, &w, &b)?)
    }

    fn norm(&mut self, name: &str, x: &B::V, layout: NormLayout) -> Result<B::V, ModelError> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let (_, axis, h) = self.be.value(x).dims3()?;
        let use_running = match layout {
            NormLayout::BatchTime => self.mode == Mode::Eval,
            NormLayout::Channel => axis < 2,
        };
        let running = if use_running { Some(self.params.running(name)?) } else { None };
        let (y, stats) = self.be.norm(x, &gamma, &beta, layout, running, self.cfg.norm_eps)?;
        if self.mode == Mode::Train && !use_running {
            let (mean, var) = match layout {
                NormLayout::BatchTime => (stats.mean, stats.var),
                // Per-(instance, unit) statistics averaged over instances.
                NormLayout::Channel => {
                    let groups = stats.mean.len() / h;
                    let avg = |v: &[f64]| {
                        (0..h)
                            .map(|u| (0..groups).map(|g| v[g * h + u]).sum::<f64>() / groups as f64)
                            .collect::<Vec<_>>()
                    };
                    (avg(&stats.mean), avg(&stats.var))
                }
            };
            self.updates.push(NormUpdate {
                name: name.to_string(),
                mean,
                var,
            });
        }
        Ok(y)
    }

    /// conv -> norm -> ELU
    fn block(&mut self, name: &str, x: &B::V) -> Result<B::V, ModelError> {
        let c = self.conv(&format!("{name}.conv"), x, 1)?;
        let n = self.norm(&format!("{name}.bn"), &c, NormLayout::BatchTime)?;
        Ok(self.be.elu(&n))
    }

    fn channel_encoder(&mut self, j: usize, x: &B::V) -> Result<B::V, ModelError> {
        let strides = self.cfg.channel_encoder.strides;
        let c1 = self.conv(&format!("attn.{j}.enc.conv1"), x, strides[0])?;
        let a = self.be.elu(&c1);
        let n = self.norm(&format!("attn.{j}.enc.bn"), &a, NormLayout::BatchTime)?;
        self.conv(&format!("attn.{j}.enc.conv2"), &n, strides[1])
    }

    /// Scores each of the `c` channel maps in `m: [b*c, f, t]`, normalizes
    /// the scores with a softmax over channels and returns the weighted sum
    /// of `src: [b*c, f', t']`.
    fn attention(
        &mut self,
        j: usize,
        m: &B::V,
        src: &B::V,
        (b, c): (usize, usize),
        encoder: bool,
    ) -> Result<B::V, ModelError> {
        let pooled = if encoder {
            let e = self.channel_encoder(j, m)?;
            self.be.time_mean(&e)?
        } else {
            self.be.time_mean(m)?
        };
        let h = self.linear(&format!("attn.{j}.fc1"), &pooled)?;
        let hidden = self.cfg.attention_hidden;
        let h = self.be.reshape(&h, &[b, c, hidden])?;
        let h = self.norm(&format!("attn.{j}.bn"), &h, NormLayout::Channel)?;
        let h = self.be.relu(&h);
        let h = self.be.reshape(&h, &[b * c, hidden])?;
        let s = self.linear(&format!("attn.{j}.fc2"), &h)?;
        let s = self.be.reshape(&s, &[b, c])?;
        let w = self.be.softmax(&s)?;
        self.attention.push(self.be.value(&w).clone());
        Ok(self.be.weighted_sum(src, &w)?)
    }

    /// Encoder, connector and decoder. With `mid = Some((b, c))` the input
    /// holds `b * c` per-channel instances and every skip connection and the
    /// connector output are fused across channels.
    fn unet(&mut self, x: B::V, mid: Option<(usize, usize)>) -> Result<B::V, ModelError> {
        let d = self.cfg.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x;
        for i in 0..d {
            let s = self.block(&format!("enc.{i}"), &h)?;
            h = self.be.max_pool(&s, self.cfg.pool_factors[i])?;
            skips.push(match mid {
                Some(bc) => self.attention(i, &s, &s, bc, false)?,
                None => s,
            });
        }
        let mut h = {
            let c = self.block("conn", &h)?;
            match mid {
                Some(bc) => self.attention(d, &c, &c, bc, false)?,
                None => c,
            }
        };
        for i in (0..d).rev() {
            let u = self.be.upsample(&h, self.cfg.pool_factors[i])?;
            let u = self.block(&format!("dec.{i}.up"), &u)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = self.be.concat_features(&[&u, &skip])?;
            h = self.block(&format!("dec.{i}.merge"), &cat)?;
        }
        Ok(h)
    }

    fn classifier(&mut self, x: &B::V) -> Result<B::V, ModelError> {
        let h = self.conv("cls.conv1", x, 1)?;
        let h = self.be.elu(&h);
        self.conv("cls.conv2", &h, 1)
    }

    fn run(&mut self, input: &B::V) -> Result<B::V, ModelError> {
        let (b, c, t) = self.be.value(input).dims3()?;
        if c == 0 {
            return Err(ModelError::EmptyChannels);
        }
        self.cfg.check_length(t)?;
        let flat = self.be.reshape(input, &[b * c, 1, t])?;
        let fused = match self.cfg.fusion {
            Fusion::Mid => self.unet(flat, Some((b, c)))?,
            Fusion::Early => {
                let mut heads = Vec::with_capacity(self.cfg.heads);
                for j in 0..self.cfg.heads {
                    heads.push(self.attention(j, &flat, &flat, (b, c), true)?);
                }
                let refs: Vec<&B::V> = heads.iter().collect();
                let virt = self.be.concat_features(&refs)?;
                drop(heads);
                self.unet(virt, None)?
            }
            Fusion::Late => {
                let dec = self.unet(flat, None)?;
                self.attention(0, &dec, &dec, (b, c), true)?
            }
        };
        self.classifier(&fused)
    }
}

/// Runs the network on `input: [b, c, t]` up to the classifier map.
pub fn forward_features<B: Backend>(
    be: &mut B,
    cfg: &ModelConfig,
    params: &Parameters,
    input: &B::V,
    mode: Mode,
) -> Result<Features<B::V>, ModelError> {
    let mut net = Net {
        be,
        cfg,
        params,
        mode,
        updates: Vec::new(),
        attention: Vec::new(),
    };
    let logits = net.run(input)?;
    Ok(Features {
        logits,
        attention: net.attention,
        norm_updates: net.updates,
    })
}

/// Average-pools the classifier map to `resolution` predictions per epoch and
/// normalizes over classes: `[b, 5, t]` to `[b, 5, (t / 3840) * resolution]`.
pub fn classify<B: Backend>(be: &mut B, logits: &B::V, resolution: usize) -> Result<B::V, ModelError> {
    check_resolution(resolution)?;
    let window = EPOCH_SAMPLES / resolution;
    let pooled = be.avg_pool(logits, window, window)?;
    Ok(be.softmax(&pooled)?)
}

/// Per-row class probabilities at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StageProbabilities {
    pub resolution: usize,
    /// `[rows, 5]`
    pub probs: Array,
}

impl StageProbabilities {
    /// From a classifier output `[1, 5, rows]`.
    pub fn from_class_major(resolution: usize, p: &Array) -> Result<Self, ModelError> {
        let (b, k, rows) = p.dims3()?;
        if b != 1 || k != NUM_STAGES {
            return Err(ModelError::Config(format!("expected [1, 5, rows], got {:?}", p.shape())));
        }
        let mut data = vec![0.0; rows * k];
        for ci in 0..k {
            for r in 0..rows {
                data[r * k + ci] = p.data()[ci * rows + r];
            }
        }
        Ok(Self {
            resolution,
            probs: Array::new(vec![rows, k], data)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn epochs(&self) -> usize {
        self.rows() / self.resolution
    }

    /// Seconds covered by one row.
    pub fn step_seconds(&self) -> f64 {
        30.0 / self.resolution as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// Most probable stage per row; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<Stage> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                Stage::from_index(best).expect("five classes")
            })
            .collect()
    }
}

/// Evaluation-mode forward of one recording `channels: [c, t]`.
pub fn forward(
    cfg: &ModelConfig,
    params: &Parameters,
    channels: &Array,
    resolution: usize,
) -> Result<StageProbabilities, ModelError> {
    let mut out = forward_multi(cfg, params, channels, &[resolution])?;
    Ok(out.0.remove(0))
}

/// One evaluation-mode pass producing several resolutions, plus the
/// attention weights of every module (`[1, c]` each).
pub fn forward_multi(
    cfg: &ModelConfig,
    params: &Parameters,
    channels: &Array,
    resolutions: &[usize],
) -> Result<(Vec<StageProbabilities>, Vec<Array>), ModelError> {
    for &r in resolutions {
        check_resolution(r)?;
    }
    let (c, t) = match *channels.shape() {
        [c, t] => (c, t),
        _ => {
            return Err(ModelError::Config(format!(
                "recording must be [channels, samples], got {:?}",
                channels.shape()
            )))
        }
    };
    let input = channels.clone().reshape(&[1, c, t])?;
    let mut be = EvalBackend;
    let feats = forward_features(&mut be, cfg, params, &input, Mode::Eval)?;
    let mut out = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        let p = classify(&mut be, &feats.logits, r)?;
        out.push(StageProbabilities::from_class_major(r, &p)?);
    }
    Ok((out, feats.attention))
}

/// Input samples that can influence one output sample of the classifier map.
pub fn receptive_field(cfg: &ModelConfig) -> usize {
    let mut rf = 1;
    let mut scale = 1;
    for i in 0..cfg.depth {
        rf += (cfg.kernel_sizes[i] - 1) * scale;
        rf += (cfg.pool_factors[i] - 1) * scale;
        scale *= cfg.pool_factors[i];
    }
    rf += (cfg.kernel_sizes[cfg.depth] - 1) * scale;
    for i in (0..cfg.depth).rev() {
        scale /= cfg.pool_factors[i];
        rf += (cfg.pool_factors[i] - 1) * scale;
        rf += 2 * (cfg.kernel_sizes[i] - 1) * scale;
    }
    if cfg.fusion != Fusion::Mid {
        let ce = &cfg.channel_encoder;
        rf += ce.kernels[0] + (ce.kernels[1] - 1) * ce.strides[0];
    }
    rf
}

/// Chunked inference over long recordings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkOptions {
    /// Epochs predicted per pass; recordings up to this length run in one pass.
    pub chunk_epochs: usize,
    /// Context epochs added on both sides of a chunk and discarded afterwards;
    /// `None` uses the receptive field rounded up to whole epochs.
    pub overlap_epochs: Option<usize>,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self {
            chunk_epochs: 256,
            overlap_epochs: None,
        }
    }
}

/// Like [`forward_multi`], splitting recordings longer than
/// `opts.chunk_epochs` into overlapping chunks and stitching chunk centres.
/// Attention weights are returned per chunk.
pub fn predict_chunked(
    cfg: &ModelConfig,
    params: &Parameters,
    channels: &Array,
    resolutions: &[usize],
    opts: ChunkOptions,
) -> Result<(Vec<StageProbabilities>, Vec<Vec<Array>>), ModelError> {
    let [c, t] = *channels.shape() else {
        return Err(ModelError::Config(format!(
            "recording must be [channels, samples], got {:?}",
            channels.shape()
        )));
    };
    cfg.check_length(t)?;
    let unit = cfg.required_multiple();
    let epochs = t / EPOCH_SAMPLES;
    if opts.chunk_epochs == 0 {
        return Err(ModelError::Config("chunk_epochs must be positive".into()));
    }
    if epochs <= opts.chunk_epochs {
        let (p, a) = forward_multi(cfg, params, channels, resolutions)?;
        return Ok((p, vec![a]));
    }
    let overlap = opts
        .overlap_epochs
        .unwrap_or_else(|| receptive_field(cfg).div_ceil(EPOCH_SAMPLES));
    let step_epochs = unit / EPOCH_SAMPLES;
    let align_down = |e: usize| e / step_epochs * step_epochs;
    let align_up = |e: usize| e.div_ceil(step_epochs) * step_epochs;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); resolutions.len()];
    let mut traces = Vec::new();
    let mut start = 0;
    while start < epochs {
        let end = (start + opts.chunk_epochs).min(epochs);
        let lo = align_down(start.saturating_sub(overlap));
        let hi = align_up((end + overlap).min(epochs)).min(epochs);
        let mut data = Vec::with_capacity(c * (hi - lo) * EPOCH_SAMPLES);
        for ch in 0..c {
            let row = channels.row(ch);
            data.extend_from_slice(&row[lo * EPOCH_SAMPLES..hi * EPOCH_SAMPLES]);
        }
        let chunk = Array::new(vec![c, (hi - lo) * EPOCH_SAMPLES], data)?;
        let (probs, attn) = forward_multi(cfg, params, &chunk, resolutions)?;
        for ((acc, p), &r) in rows.iter_mut().zip(&probs).zip(resolutions) {
            let from = (start - lo) * r * NUM_STAGES;
            let to = (end - lo) * r * NUM_STAGES;
            acc.extend_from_slice(&p.probs.data()[from..to]);
        }
        traces.push(attn);
        start = end;
    }
    let out = rows
        .into_iter()
        .zip(resolutions)
        .map(|(data, &r)| {
            Ok(StageProbabilities {
                resolution: r,
                probs: Array::new(vec![epochs * r, NUM_STAGES], data)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok((out, traces))
}
