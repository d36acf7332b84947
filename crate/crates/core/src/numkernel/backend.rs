//! One forward-pass vocabulary, two executions: recorded on a [`Graph`] for
//! training, or evaluated directly on arrays for inference so intermediates
//! are dropped as soon as they go out of scope.

use super::graph::{self, Graph, NodeId};
use super::kernels::{self, NormLayout, NormStatistics, Padding};
use super::{Array, KernelError};

pub trait Backend {
    type V;

    fn input(&mut self, value: Array) -> Self::V;
    /// A learnable tensor; `name` identifies it across calls.
    fn param(&mut self, name: &str, value: &Array) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Array;

    fn conv1d(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, stride: usize, padding: Padding)
        -> Result<Self::V, KernelError>;
    fn norm(
        &mut self,
        x: &Self::V,
        gamma: &Self::V,
        beta: &Self::V,
        layout: NormLayout,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Self::V, NormStatistics), KernelError>;
    fn elu(&mut self, x: &Self::V) -> Self::V;
    fn relu(&mut self, x: &Self::V) -> Self::V;
    fn max_pool(&mut self, x: &Self::V, factor: usize) -> Result<Self::V, KernelError>;
    fn avg_pool(&mut self, x: &Self::V, kernel: usize, stride: usize) -> Result<Self::V, KernelError>;
    fn upsample(&mut self, x: &Self::V, factor: usize) -> Result<Self::V, KernelError>;
    fn concat_features(&mut self, parts: &[&Self::V]) -> Result<Self::V, KernelError>;
    fn linear(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V, KernelError>;
    fn time_mean(&mut self, x: &Self::V) -> Result<Self::V, KernelError>;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V, KernelError>;
    fn softmax(&mut self, x: &Self::V) -> Result<Self::V, KernelError>;
    fn weighted_sum(&mut self, m: &Self::V, w: &Self::V) -> Result<Self::V, KernelError>;
}

/// Records every operation on the wrapped graph. Parameters become leaves
/// requiring gradients, created once per name.
pub struct TapeBackend<'g> {
    pub graph: &'g mut Graph,
    params: Vec<(String, NodeId)>,
}

impl<'g> TapeBackend<'g> {
    pub fn new(graph: &'g mut Graph) -> Self {
        Self {
            graph,
            params: Vec::new(),
        }
    }

    /// Uses an existing node for parameter `name` instead of creating a leaf.
    pub fn bind(&mut self, name: &str, id: NodeId) {
        self.params.retain(|(n, _)| n != name);
        self.params.push((name.to_string(), id));
    }

    /// `(name, leaf)` for every parameter touched so far, in first-use order.
    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }
}

impl Backend for TapeBackend<'_> {
    type V = NodeId;

    fn input(&mut self, value: Array) -> NodeId {
        self.graph.leaf(value, false)
    }

    fn param(&mut self, name: &str, value: &Array) -> NodeId {
        if let Some((_, id)) = self.params.iter().find(|(n, _)| n == name) {
            return *id;
        }
        let id = self.graph.leaf(value.clone(), true);
        self.params.push((name.to_string(), id));
        id
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Array {
        self.graph.value(*v)
    }

    fn conv1d(&mut self, x: &NodeId, w: &NodeId, b: &NodeId, stride: usize, padding: Padding)
        -> Result<NodeId, KernelError> {
        self.graph.conv1d(*x, *w, *b, stride, padding)
    }

    fn norm(
        &mut self,
        x: &NodeId,
        gamma: &NodeId,
        beta: &NodeId,
        layout: NormLayout,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(NodeId, NormStatistics), KernelError> {
        self.graph.norm(*x, *gamma, *beta, layout, running, eps)
    }

    fn elu(&mut self, x: &NodeId) -> NodeId {
        self.graph.elu(*x)
    }

    fn relu(&mut self, x: &NodeId) -> NodeId {
        self.graph.relu(*x)
    }

    fn max_pool(&mut self, x: &NodeId, factor: usize) -> Result<NodeId, KernelError> {
        self.graph.max_pool(*x, factor)
    }

    fn avg_pool(&mut self, x: &NodeId, kernel: usize, stride: usize) -> Result<NodeId, KernelError> {
        self.graph.avg_pool(*x, kernel, stride)
    }

    fn upsample(&mut self, x: &NodeId, factor: usize) -> Result<NodeId, KernelError> {
        self.graph.upsample(*x, factor)
    }

    fn concat_features(&mut self, parts: &[&NodeId]) -> Result<NodeId, KernelError> {
        let ids: Vec<NodeId> = parts.iter().map(|&&p| p).collect();
        self.graph.concat_features(&ids)
    }

    fn linear(&mut self, x: &NodeId, w: &NodeId, b: &NodeId) -> Result<NodeId, KernelError> {
        self.graph.linear(*x, *w, *b)
    }

    fn time_mean(&mut self, x: &NodeId) -> Result<NodeId, KernelError> {
        self.graph.time_mean(*x)
    }

    fn reshape(&mut self, x: &NodeId, shape: &[usize]) -> Result<NodeId, KernelError> {
        self.graph.reshape(*x, shape)
    }

    fn softmax(&mut self, x: &NodeId) -> Result<NodeId, KernelError> {
        self.graph.softmax(*x)
    }

    fn weighted_sum(&mut self, m: &NodeId, w: &NodeId) -> Result<NodeId, KernelError> {
        self.graph.weighted_sum(*m, *w)
    }
}

/// Direct evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct EvalBackend;

impl Backend for EvalBackend {
    type V = Array;

    fn input(&mut self, value: Array) -> Array {
        value
    }

    fn param(&mut self, _name: &str, value: &Array) -> Array {
        value.clone()
    }

    fn value<'a>(&'a self, v: &'a Array) -> &'a Array {
        v
    }

    fn conv1d(&mut self, x: &Array, w: &Array, b: &Array, stride: usize, padding: Padding)
        -> Result<Array, KernelError> {
        graph::conv1d_value(x, w, b, stride, padding).map(|(a, _)| a)
    }

    fn norm(
        &mut self,
        x: &Array,
        gamma: &Array,
        beta: &Array,
        layout: NormLayout,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Array, NormStatistics), KernelError> {
        graph::norm_value(x, gamma, beta, layout, running, eps)
    }

    fn elu(&mut self, x: &Array) -> Array {
        x.map(kernels::elu)
    }

    fn relu(&mut self, x: &Array) -> Array {
        x.map(kernels::relu)
    }

    fn max_pool(&mut self, x: &Array, factor: usize) -> Result<Array, KernelError> {
        graph::max_pool_value(x, factor).map(|(a, _)| a)
    }

    fn avg_pool(&mut self, x: &Array, kernel: usize, stride: usize) -> Result<Array, KernelError> {
        graph::avg_pool_value(x, kernel, stride)
    }

    fn upsample(&mut self, x: &Array, factor: usize) -> Result<Array, KernelError> {
        graph::upsample_value(x, factor)
    }

    fn concat_features(&mut self, parts: &[&Array]) -> Result<Array, KernelError> {
        graph::concat_features(parts).map(|(a, _)| a)
    }

    fn linear(&mut self, x: &Array, w: &Array, b: &Array) -> Result<Array, KernelError> {
        graph::linear_forward(x, w, b)
    }

    fn time_mean(&mut self, x: &Array) -> Result<Array, KernelError> {
        graph::time_mean(x)
    }

    fn reshape(&mut self, x: &Array, shape: &[usize]) -> Result<Array, KernelError> {
        x.clone().reshape(shape)
    }

    fn softmax(&mut self, x: &Array) -> Result<Array, KernelError> {
        graph::softmax_value(x).map(|(a, _)| a)
    }

    fn weighted_sum(&mut self, m: &Array, w: &Array) -> Result<Array, KernelError> {
        graph::weighted_sum(m, w)
    }
}
