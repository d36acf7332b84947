//! Dynamically built reverse-mode differentiation graph.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep. Intermediate
//! values and gradients are released as soon as the sweep passes them; only
//! leaves keep their gradients.

use super::kernels::{self, ConvGeometry, NormLayout, NormStatistics, Padding};
use super::{Array, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { geo: ConvGeometry },
    Norm { layout: NormLayout, stats: NormStatistics, batch_stats: bool },
    Elu,
    Relu,
    MaxPool { factor: usize, argmax: Vec<u8> },
    AvgPool { kernel: usize, stride: usize },
    Upsample { factor: usize },
    ConcatFeatures { widths: Vec<usize> },
    Linear,
    TimeMean,
    Reshape,
    Softmax { dims: (usize, usize, usize) },
    WeightedSum { channels: usize },
    CrossEntropy { targets: Vec<Option<usize>>, count: usize },
    Mul,
    Add,
    Sum,
}

#[derive(Debug)]
struct Node {
    value: Option<Array>,
    grad: Option<Array>,
    op: Op,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    branches: Option<u64>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that fingerprints the discrete choices of piecewise ops
    /// (ReLU signs, max-pool winners), so callers can tell whether two
    /// evaluations took the same smooth piece.
    pub fn with_branch_tracking() -> Self {
        Self {
            nodes: Vec::new(),
            branches: Some(0xcbf2_9ce4_8422_2325),
        }
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branches
    }

    fn mix(&mut self, bits: impl Iterator<Item = u8>) {
        if let Some(h) = self.branches.as_mut() {
            for b in bits {
                *h = (*h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter.
    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, vec![], requires_grad)
    }

    fn push(&mut self, value: Array, op: Op, parents: Vec<NodeId>, requires_grad: bool) -> NodeId {
        let requires_grad =
            requires_grad || parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            grad: None,
            op,
            parents,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Value of a node. Panics if the value was released by `backward`.
    pub fn value(&self, id: NodeId) -> &Array {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("node value released after backward")
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Array> {
        self.nodes[id.0].grad.take()
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId, KernelError> {
        let (out, geo) = conv1d_value(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(out, Op::Conv1d { geo }, vec![x, w, b], false))
    }

    /// Normalization with affine parameters. `running` supplies fixed
    /// statistics (evaluation mode); `None` uses statistics of `x` itself.
    /// Returns the node and the statistics that were applied.
    pub fn norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        layout: NormLayout,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(NodeId, NormStatistics), KernelError> {
        let (y, stats) = norm_value(self.value(x), self.value(gamma), self.value(beta), layout, running, eps)?;
        let id = self.push(
            y,
            Op::Norm {
                layout,
                stats: stats.clone(),
                batch_stats: running.is_none(),
            },
            vec![x, gamma, beta],
            false,
        );
        Ok((id, stats))
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(kernels::elu);
        self.push(y, Op::Elu, vec![x], false)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(kernels::relu);
        if self.branches.is_some() {
            let signs: Vec<u8> = self.value(x).data().iter().map(|&v| (v > 0.0) as u8).collect();
            self.mix(signs.into_iter());
        }
        self.push(y, Op::Relu, vec![x], false)
    }

    pub fn max_pool(&mut self, x: NodeId, factor: usize) -> Result<NodeId, KernelError> {
        let (y, argmax) = max_pool_value(self.value(x), factor)?;
        if self.branches.is_some() {
            self.mix(argmax.iter().copied());
        }
        Ok(self.push(y, Op::MaxPool { factor, argmax }, vec![x], false))
    }

    pub fn avg_pool(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId, KernelError> {
        let y = avg_pool_value(self.value(x), kernel, stride)?;
        Ok(self.push(y, Op::AvgPool { kernel, stride }, vec![x], false))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId, KernelError> {
        let y = upsample_value(self.value(x), factor)?;
        Ok(self.push(y, Op::Upsample { factor }, vec![x], false))
    }

    /// Concatenates `[n, c_i, t]` maps along the feature axis.
    pub fn concat_features(&mut self, parts: &[NodeId]) -> Result<NodeId, KernelError> {
        let (y, widths) = concat_features(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>())?;
        Ok(self.push(y, Op::ConcatFeatures { widths }, parts.to_vec(), false))
    }

    /// `y[m, o] = b[o] + sum_i w[o, i] x[m, i]` for `x: [m, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let y = linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear, vec![x, w, b], false))
    }

    /// Mean over the last axis of `[n, f, t]`, giving `[n, f]`.
    pub fn time_mean(&mut self, x: NodeId) -> Result<NodeId, KernelError> {
        let y = time_mean(self.value(x))?;
        Ok(self.push(y, Op::TimeMean, vec![x], false))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, KernelError> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape, vec![x], false))
    }

    /// Softmax along axis 1 of a 2-D `[rows, n]` or 3-D `[a, n, b]` array.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, KernelError> {
        let (y, dims) = softmax_value(self.value(x))?;
        Ok(self.push(y, Op::Softmax { dims }, vec![x], false))
    }

    /// `y[b] = sum_c w[b, c] * m[b * C + c]` for `m: [B*C, f, t]`, `w: [B, C]`.
    pub fn weighted_sum(&mut self, m: NodeId, w: NodeId) -> Result<NodeId, KernelError> {
        let y = weighted_sum(self.value(m), self.value(w))?;
        let channels = self.value(w).shape()[1];
        Ok(self.push(y, Op::WeightedSum { channels }, vec![m, w], false))
    }

    /// Masked mean cross-entropy of probabilities `[b, classes, e]` against
    /// targets indexed `b * e + e_i`.
    pub fn cross_entropy(
        &mut self,
        p: NodeId,
        targets: &[Option<usize>],
    ) -> Result<NodeId, KernelError> {
        let pv = self.value(p);
        let d = pv.dims3()?;
        let (loss, count) = kernels::cross_entropy_forward(pv.data(), d, targets)?;
        Ok(self.push(
            Array::scalar(loss),
            Op::CrossEntropy {
                targets: targets.to_vec(),
                count,
            },
            vec![p],
            false,
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        kernels::check_same_len(self.value(a), self.value(b), "mul")?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let y = Array::new(av.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Mul, vec![a, b], false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        kernels::check_same_len(self.value(a), self.value(b), "add")?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let y = Array::new(av.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Add, vec![a, b], false))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::Sum, vec![a], false)
    }

    /// Reverse sweep from a scalar root. Afterwards leaves that require
    /// gradients hold one with the shape of their value; every other node's
    /// value and gradient is released.
    pub fn backward(&mut self, root: NodeId) -> Result<(), KernelError> {
        if self.value(root).len() != 1 {
            return Err(KernelError::Dimension(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        self.nodes[root.0].grad = Some(Array::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                self.nodes[i].value = None;
                continue;
            };
            let node = &self.nodes[i];
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = {
                let parents: Vec<&Array> = node
                    .parents
                    .iter()
                    .map(|p| {
                        self.nodes[p.0]
                            .value
                            .as_ref()
                            .expect("parent value released before child backward")
                    })
                    .collect();
                let out = node.value.as_ref().expect("value released");
                backward_op(&node.op, &parents, out, &g, &needs)?
            };
            let parents = self.nodes[i].parents.clone();
            for ((p, pg), need) in parents.into_iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                let slot = &mut self.nodes[p.0].grad;
                match slot {
                    Some(acc) => acc.add_scaled(&pg, 1.0),
                    None => *slot = Some(pg),
                }
            }
            self.nodes[i].value = None;
        }
        Ok(())
    }
}

pub(crate) fn conv1d_value(
    x: &Array,
    w: &Array,
    b: &Array,
    stride: usize,
    padding: Padding,
) -> Result<(Array, ConvGeometry), KernelError> {
    let (n, cin, t) = x.dims3()?;
    let [cout, wcin, k] = *w.shape() else {
        return Err(KernelError::Dimension(format!(
            "kernels must be [cout, cin, k], got {:?}",
            w.shape()
        )));
    };
    if wcin != cin {
        return Err(KernelError::Dimension(format!(
            "input has {cin} channels, kernels expect {wcin}"
        )));
    }
    if b.len() != cout {
        return Err(KernelError::Dimension(format!(
            "bias has {} entries for {cout} output channels",
            b.len()
        )));
    }
    let geo = kernels::conv_geometry(t, k, stride, padding)?;
    let out = kernels::conv1d_forward(x.data(), (n, cin, t), w.data(), (cout, k), b.data(), geo);
    let shape = if x.ndim() == 3 {
        vec![n, cout, geo.out_len]
    } else {
        vec![cout, geo.out_len]
    };
    Ok((Array::new(shape, out)?, geo))
}

pub(crate) fn norm_value(
    x: &Array,
    gamma: &Array,
    beta: &Array,
    layout: NormLayout,
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Result<(Array, NormStatistics), KernelError> {
    let shape = x.dims3()?;
    let features = match layout {
        NormLayout::BatchTime => shape.1,
        NormLayout::Channel => shape.2,
    };
    if gamma.len() != features || beta.len() != features {
        return Err(KernelError::Dimension(format!(
            "normalization over {features} features got gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let stats = match running {
        Some((m, v)) => {
            if m.len() != features || v.len() != features {
                return Err(KernelError::Dimension("running statistics size mismatch".into()));
            }
            kernels::running_statistics(m, v, shape, layout, eps)
        }
        None => kernels::norm_statistics(x.data(), shape, layout, eps)?,
    };
    let y = kernels::norm_forward(x.data(), shape, layout, &stats, gamma.data(), beta.data());
    Ok((Array::new(x.shape().to_vec(), y)?, stats))
}

fn with_last_dim(x: &Array, t: usize) -> Vec<usize> {
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-scalar shape") = t;
    shape
}

pub(crate) fn max_pool_value(x: &Array, factor: usize) -> Result<(Array, Vec<u8>), KernelError> {
    let (n, c, t) = x.dims3()?;
    if factor == 0 || factor > t || factor > u8::MAX as usize {
        return Err(KernelError::Dimension(format!(
            "max pooling factor {factor} invalid for length {t}"
        )));
    }
    let (y, argmax) = kernels::max_pool_forward(x.data(), n * c, t, factor);
    Ok((Array::new(with_last_dim(x, t / factor), y)?, argmax))
}

pub(crate) fn avg_pool_value(x: &Array, kernel: usize, stride: usize) -> Result<Array, KernelError> {
    let (n, c, t) = x.dims3()?;
    let t_out = kernels::pool_output_len(t, kernel, stride)?;
    let y = kernels::avg_pool_forward(x.data(), n * c, t, kernel, stride);
    Array::new(with_last_dim(x, t_out), y)
}

pub(crate) fn upsample_value(x: &Array, factor: usize) -> Result<Array, KernelError> {
    if factor == 0 {
        return Err(KernelError::Dimension("upsampling factor must be >= 1".into()));
    }
    let (n, c, t) = x.dims3()?;
    let y = kernels::upsample_forward(x.data(), n * c, t, factor);
    Array::new(with_last_dim(x, t * factor), y)
}

pub(crate) fn softmax_value(x: &Array) -> Result<(Array, (usize, usize, usize)), KernelError> {
    let d = softmax_dims(x)?;
    Ok((Array::new(x.shape().to_vec(), kernels::softmax_axis1(x.data(), d))?, d))
}

fn softmax_dims(x: &Array) -> Result<(usize, usize, usize), KernelError> {
    match *x.shape() {
        [n] => Ok((1, n, 1)),
        [a, n] => Ok((a, n, 1)),
        [a, n, b] => Ok((a, n, b)),
        _ => Err(KernelError::Dimension(format!(
            "softmax expects 1-3 dimensions, got {:?}",
            x.shape()
        ))),
    }
}

pub(crate) fn concat_features(parts: &[&Array]) -> Result<(Array, Vec<usize>), KernelError> {
    let first = parts
        .first()
        .ok_or_else(|| KernelError::Dimension("nothing to concatenate".into()))?;
    let (n, _, t) = first.dims3()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc, pt) = p.dims3()?;
        if pn != n || pt != t || p.ndim() != first.ndim() {
            return Err(KernelError::Dimension(format!(
                "cannot concatenate {:?} with {:?}",
                first.shape(),
                p.shape()
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total * t);
    for inst in 0..n {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[inst * c * t..(inst + 1) * c * t]);
        }
    }
    let shape = if first.ndim() == 3 {
        vec![n, total, t]
    } else {
        vec![total, t]
    };
    Ok((Array::new(shape, data)?, widths))
}

pub(crate) fn linear_forward(x: &Array, w: &Array, b: &Array) -> Result<Array, KernelError> {
    let [m, inp] = *x.shape() else {
        return Err(KernelError::Dimension(format!("linear input must be 2-D, got {:?}", x.shape())));
    };
    let [out, win] = *w.shape() else {
        return Err(KernelError::Dimension(format!("linear weights must be 2-D, got {:?}", w.shape())));
    };
    if win != inp || b.len() != out {
        return Err(KernelError::Dimension(format!(
            "linear layer {:?} / bias {} does not fit input {:?}",
            w.shape(),
            b.len(),
            x.shape()
        )));
    }
    let mut y = Vec::with_capacity(m * out);
    for r in 0..m {
        let xr = &x.data()[r * inp..(r + 1) * inp];
        for o in 0..out {
            y.push(b.data()[o] + kernels::dot(xr, &w.data()[o * inp..(o + 1) * inp]));
        }
    }
    Array::new(vec![m, out], y)
}

pub(crate) fn time_mean(x: &Array) -> Result<Array, KernelError> {
    let (n, f, t) = x.dims3()?;
    if t == 0 {
        return Err(KernelError::Dimension("time mean over empty axis".into()));
    }
    let data = x.data().chunks_exact(t).map(|r| kernels::sum(r) / t as f64).collect();
    Array::new(vec![n, f], data)
}

pub(crate) fn weighted_sum(m: &Array, w: &Array) -> Result<Array, KernelError> {
    let [b, c] = *w.shape() else {
        return Err(KernelError::Dimension(format!("weights must be [B, C], got {:?}", w.shape())));
    };
    let [bc, f, t] = *m.shape() else {
        return Err(KernelError::Dimension(format!("maps must be [B*C, F, T], got {:?}", m.shape())));
    };
    if bc != b * c || c == 0 {
        return Err(KernelError::Dimension(format!(
            "{bc} channel maps do not match weights {:?}",
            w.shape()
        )));
    }
    let plane = f * t;
    let mut y = vec![0.0; b * plane];
    for bi in 0..b {
        let out = &mut y[bi * plane..(bi + 1) * plane];
        // Accumulate in channel-index order.
        for ci in 0..c {
            let wv = w.data()[bi * c + ci];
            let src = &m.data()[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
            for (o, s) in out.iter_mut().zip(src) {
                *o += wv * s;
            }
        }
    }
    Array::new(vec![b, f, t], y)
}

fn backward_op(
    op: &Op,
    parents: &[&Array],
    out: &Array,
    g: &Array,
    needs: &[bool],
) -> Result<Vec<Option<Array>>, KernelError> {
    let shaped = |like: &Array, data: Vec<f64>| Array::new(like.shape().to_vec(), data);
    Ok(match op {
        Op::Leaf => vec![],
        Op::Conv1d { geo } => {
            let (x, w) = (parents[0], parents[1]);
            let d = x.dims3()?;
            let [cout, _, k] = *w.shape() else { unreachable!() };
            let gx = if needs[0] {
                Some(shaped(x, kernels::conv1d_backward_input(g.data(), d, w.data(), (cout, k), *geo))?)
            } else {
                None
            };
            let (gw, gb) = if needs[1] || needs[2] {
                let (gw, gb) = kernels::conv1d_backward_params(g.data(), x.data(), d, (cout, k), *geo);
                (Some(shaped(w, gw)?), Some(shaped(parents[2], gb)?))
            } else {
                (None, None)
            };
            vec![gx, gw, gb]
        }
        Op::Norm { layout, stats, batch_stats } => {
            let x = parents[0];
            let (dx, dg, db) = kernels::norm_backward(
                x.data(),
                g.data(),
                x.dims3()?,
                *layout,
                stats,
                parents[1].data(),
                *batch_stats,
            );
            vec![
                Some(shaped(x, dx)?),
                Some(shaped(parents[1], dg)?),
                Some(shaped(parents[2], db)?),
            ]
        }
        Op::Elu => {
            let x = parents[0];
            let d = x.data().iter().zip(g.data()).map(|(&xv, &gv)| gv * kernels::elu_grad(xv)).collect();
            vec![Some(shaped(x, d)?)]
        }
        Op::Relu => {
            let x = parents[0];
            let d = x.data().iter().zip(g.data()).map(|(&xv, &gv)| gv * kernels::relu_grad(xv)).collect();
            vec![Some(shaped(x, d)?)]
        }
        Op::MaxPool { factor, argmax } => {
            let x = parents[0];
            let (n, c, t) = x.dims3()?;
            vec![Some(shaped(x, kernels::max_pool_backward(g.data(), argmax, n * c, t, *factor))?)]
        }
        Op::AvgPool { kernel, stride } => {
            let x = parents[0];
            let (n, c, t) = x.dims3()?;
            vec![Some(shaped(x, kernels::avg_pool_backward(g.data(), n * c, t, *kernel, *stride))?)]
        }
        Op::Upsample { factor } => {
            let x = parents[0];
            let (n, c, t) = x.dims3()?;
            vec![Some(shaped(x, kernels::upsample_backward(g.data(), n * c, t, *factor))?)]
        }
        Op::ConcatFeatures { widths } => {
            let (n, total, t) = out.dims3()?;
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|&c| Vec::with_capacity(n * c * t)).collect();
            for inst in 0..n {
                let mut off = inst * total * t;
                for (gi, &c) in grads.iter_mut().zip(widths) {
                    gi.extend_from_slice(&g.data()[off..off + c * t]);
                    off += c * t;
                }
            }
            grads
                .into_iter()
                .zip(parents)
                .zip(needs)
                .map(|((gd, p), &need)| if need { shaped(p, gd).map(Some) } else { Ok(None) })
                .collect::<Result<_, _>>()?
        }
        Op::Linear => {
            let (x, w) = (parents[0], parents[1]);
            let [m, inp] = *x.shape() else { unreachable!() };
            let out_f = w.shape()[0];
            let mut gx = vec![0.0; m * inp];
            let mut gw = vec![0.0; out_f * inp];
            let mut gb = vec![0.0; out_f];
            for r in 0..m {
                let xr = &x.data()[r * inp..(r + 1) * inp];
                for o in 0..out_f {
                    let gv = g.data()[r * out_f + o];
                    gb[o] += gv;
                    let wr = &w.data()[o * inp..(o + 1) * inp];
                    for i in 0..inp {
                        gx[r * inp + i] += gv * wr[i];
                        gw[o * inp + i] += gv * xr[i];
                    }
                }
            }
            vec![
                Some(shaped(x, gx)?),
                Some(shaped(w, gw)?),
                Some(shaped(parents[2], gb)?),
            ]
        }
        Op::TimeMean => {
            let x = parents[0];
            let (_, _, t) = x.dims3()?;
            let inv = 1.0 / t as f64;
            let d = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, t)).collect();
            vec![Some(shaped(x, d)?)]
        }
        Op::Reshape => vec![Some(shaped(parents[0], g.data().to_vec())?)],
        Op::Softmax { dims } => {
            vec![Some(shaped(parents[0], kernels::softmax_axis1_backward(out.data(), g.data(), *dims))?)]
        }
        Op::WeightedSum { channels } => {
            let (m, w) = (parents[0], parents[1]);
            let c = *channels;
            let [bc, f, t] = *m.shape() else { unreachable!() };
            let plane = f * t;
            let mut gm = vec![0.0; bc * plane];
            let mut gw = vec![0.0; bc];
            for idx in 0..bc {
                let bi = idx / c;
                let gb = &g.data()[bi * plane..(bi + 1) * plane];
                let wv = w.data()[idx];
                for (o, &gv) in gm[idx * plane..(idx + 1) * plane].iter_mut().zip(gb) {
                    *o = wv * gv;
                }
                gw[idx] = kernels::dot(&m.data()[idx * plane..(idx + 1) * plane], gb);
            }
            vec![Some(shaped(m, gm)?), Some(shaped(w, gw)?)]
        }
        Op::CrossEntropy { targets, count } => {
            let p = parents[0];
            let d = p.dims3()?;
            vec![Some(shaped(
                p,
                kernels::cross_entropy_backward(p.data(), d, targets, *count, g.data()[0]),
            )?)]
        }
        Op::Mul => {
            let (a, b) = (parents[0], parents[1]);
            let ga = b.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
            let gb = a.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
            vec![Some(shaped(a, ga)?), Some(shaped(b, gb)?)]
        }
        Op::Add => vec![
            Some(shaped(parents[0], g.data().to_vec())?),
            Some(shaped(parents[1], g.data().to_vec())?),
        ],
        Op::Sum => {
            let a = parents[0];
            vec![Some(Array::full(a.shape(), g.data()[0]))]
        }
    })
}
