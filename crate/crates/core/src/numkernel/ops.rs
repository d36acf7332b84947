//! Standalone layer operations on plain arrays.

use serde::{Deserialize, Serialize};

use super::graph;
use super::kernels::{self, NormLayout, Padding};
use super::{Array, KernelError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `kernels` is `[cout, cin, k]`; `input` is `[cin, t]` or `[n, cin, t]`.
pub fn conv1d(
    input: &Array,
    kernels: &Array,
    bias: &Array,
    stride: usize,
    padding: Padding,
) -> Result<Array, KernelError> {
    graph::conv1d_value(input, kernels, bias, stride, padding).map(|(y, _)| y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Eval,
}

/// Which axis of the input holds the samples being normalized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// `[n, f]`: statistics per feature over the rows.
    Rows,
    /// `[f, t]` or `[n, f, t]`: statistics per feature over instances and time.
    Time,
}

/// Exponential moving averages of per-feature mean and (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`
    pub fn update(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        for (r, &m) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, &v) in self.var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

/// Batch normalization with affine parameters. Train mode normalizes with
/// the batch statistics and folds them into `running`; eval mode uses
/// `running` unchanged.
pub fn batch_norm(
    input: &Array,
    gamma: &Array,
    beta: &Array,
    axis: NormAxis,
    mode: NormMode,
    running: &mut RunningStats,
) -> Result<Array, KernelError> {
    let (view, layout) = match axis {
        NormAxis::Rows => {
            let [n, f] = *input.shape() else {
                return Err(KernelError::Dimension(format!(
                    "row normalization expects [n, f], got {:?}",
                    input.shape()
                )));
            };
            (input.clone().reshape(&[1, n, f])?, NormLayout::Channel)
        }
        NormAxis::Time => (input.clone(), NormLayout::BatchTime),
    };
    let fixed = match mode {
        NormMode::Train => None,
        NormMode::Eval => Some((running.mean.as_slice(), running.var.as_slice())),
    };
    let (y, stats) = graph::norm_value(&view, gamma, beta, layout, fixed, BN_EPS)?;
    if mode == NormMode::Train {
        running.update(&stats.mean, &stats.var, BN_MOMENTUM);
    }
    y.reshape(input.shape())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

pub fn activation(input: &Array, kind: Activation) -> Array {
    match kind {
        Activation::Elu => input.map(kernels::elu),
        Activation::Relu => input.map(kernels::relu),
    }
}

/// Average pooling along the last axis.
pub fn pool_avg(input: &Array, kernel: usize, stride: usize) -> Result<Array, KernelError> {
    graph::avg_pool_value(input, kernel, stride)
}

/// Nearest-neighbour upsampling along the last axis.
pub fn upsample_nn(input: &Array, factor: usize) -> Result<Array, KernelError> {
    graph::upsample_value(input, factor)
}

/// Softmax of a 1-D array.
pub fn softmax(input: &Array) -> Result<Array, KernelError> {
    if input.ndim() != 1 || input.is_empty() {
        return Err(KernelError::Dimension(format!(
            "softmax expects a non-empty vector, got {:?}",
            input.shape()
        )));
    }
    graph::softmax_value(input).map(|(y, _)| y)
}

/// Mean of `-ln p[e, label]` over epochs whose label is present.
/// `probabilities` is `[e, classes]`; rows at masked epochs are ignored.
pub fn masked_cross_entropy(probabilities: &Array, labels: &[Option<usize>]) -> Result<f64, KernelError> {
    let [e, classes] = *probabilities.shape() else {
        return Err(KernelError::Dimension(format!(
            "probabilities must be [epochs, classes], got {:?}",
            probabilities.shape()
        )));
    };
    for (row, label) in labels.iter().enumerate().take(e) {
        if label.is_some() {
            let sum: f64 = probabilities.row(row).iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(KernelError::InvalidProbabilities { row, sum });
            }
        }
    }
    // `[e, classes]` is the `[b, classes, 1]` layout with one epoch per instance.
    kernels::cross_entropy_forward(probabilities.data(), (e, classes, 1), labels).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn conv_valid_hand_example() {
        let x = Array::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let w = Array::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = conv1d(&x, &w, &Array::from_vec(vec![0.0]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x = Array::from_rows(&[vec![0.5, -1.0, 2.0, 7.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let w = Array::new(vec![2, 2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv1d(&x, &w, &Array::zeros(&[2]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_output_lengths() {
        let x = Array::from_rows(&[vec![1.0; 4]]).unwrap();
        let w = Array::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = conv1d(&x, &w, &Array::zeros(&[1]), 2, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        let x = Array::from_rows(&[vec![1.0; 10]]).unwrap();
        for k in 1..=6 {
            let w = Array::full(&[1, 1, k], 1.0);
            let y = conv1d(&x, &w, &Array::zeros(&[1]), 1, Padding::Same).unwrap();
            assert_eq!(y.shape(), &[1, 10], "k={k}");
        }
    }

    #[test]
    fn same_padding_puts_floor_on_the_left() {
        // K = 4: one sample left, two right.
        let x = Array::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let w = Array::new(vec![1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = conv1d(&x, &w, &Array::zeros(&[1]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Array::from_rows(&[vec![1.0; 4]]).unwrap();
        let w = Array::full(&[1, 2, 2], 1.0);
        assert!(matches!(
            conv1d(&x, &w, &Array::zeros(&[1]), 1, Padding::Valid),
            Err(KernelError::Dimension(_))
        ));
    }

    #[test]
    fn batch_norm_two_points() {
        let x = Array::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let mut rs = RunningStats::new(1);
        let y = batch_norm(
            &x,
            &Array::from_vec(vec![1.0]),
            &Array::from_vec(vec![0.0]),
            NormAxis::Rows,
            NormMode::Train,
            &mut rs,
        )
        .unwrap();
        let m = (1.0 / (1.0 + BN_EPS)).sqrt();
        assert!(close(y.data(), &[-m, m], 1e-15), "{y:?}");
        assert!(close(&rs.mean, &[0.2], 1e-15));
        assert!(close(&rs.var, &[0.9 + 0.1], 1e-15));
    }

    #[test]
    fn batch_norm_zero_gamma_gives_beta() {
        let x = Array::from_rows(&[vec![1.0, 5.0], vec![3.0, -2.0], vec![0.0, 1.0]]).unwrap();
        let y = batch_norm(
            &x,
            &Array::zeros(&[2]),
            &Array::from_vec(vec![0.5, -1.5]),
            NormAxis::Rows,
            NormMode::Train,
            &mut RunningStats::new(2),
        )
        .unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn batch_norm_eval_with_batch_stats_matches_train() {
        let x = Array::from_rows(&[vec![1.0, 4.0, -2.0, 0.5], vec![0.0, 3.0, 3.0, 1.0]]).unwrap();
        let gamma = Array::from_vec(vec![1.5, 0.5]);
        let beta = Array::from_vec(vec![0.1, -0.2]);
        let train = batch_norm(&x, &gamma, &beta, NormAxis::Time, NormMode::Train, &mut RunningStats::new(2))
            .unwrap();
        let var = |r: &[f64]| {
            let m = r.iter().sum::<f64>() / 4.0;
            (m, r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0)
        };
        let (m0, v0) = var(x.row(0));
        let (m1, v1) = var(x.row(1));
        let mut rs = RunningStats {
            mean: vec![m0, m1],
            var: vec![v0, v1],
        };
        let eval = batch_norm(&x, &gamma, &beta, NormAxis::Time, NormMode::Eval, &mut rs).unwrap();
        assert!(close(train.data(), eval.data(), 1e-9));
        assert_eq!(rs.mean, vec![m0, m1]);
    }

    #[test]
    fn batch_norm_single_row_is_degenerate() {
        let x = Array::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let err = batch_norm(
            &x,
            &Array::full(&[2], 1.0),
            &Array::zeros(&[2]),
            NormAxis::Rows,
            NormMode::Train,
            &mut RunningStats::new(2),
        )
        .unwrap_err();
        assert_eq!(err, KernelError::DegenerateBatch(1));
    }

    #[test]
    fn activations() {
        let zero = Array::from_vec(vec![0.0]);
        assert_eq!(activation(&zero, Activation::Elu).data(), &[0.0]);
        assert_eq!(activation(&zero, Activation::Relu).data(), &[0.0]);
        let e = activation(&Array::from_vec(vec![-1.0]), Activation::Elu).data()[0];
        assert!((e - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((e + 0.6321).abs() < 1e-4);
        let r = activation(&Array::from_vec(vec![-2.0, 3.0]), Activation::Relu);
        assert_eq!(r.data(), &[0.0, 3.0]);
    }

    #[test]
    fn pooling_examples() {
        let x = Array::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(pool_avg(&x, 2, 2).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(pool_avg(&x, 4, 1).unwrap().data(), &[5.0]);
        assert_eq!(pool_avg(&x, 1, 1).unwrap(), x);
        assert!(matches!(pool_avg(&x, 5, 1), Err(KernelError::Dimension(_))));
    }

    #[test]
    fn upsample_examples() {
        let x = Array::from_vec(vec![1.0, 2.0]);
        assert_eq!(upsample_nn(&x, 2).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample_nn(&x, 1).unwrap(), x);
        let c = Array::full(&[2, 12], 0.7);
        let down = pool_avg(&c, 3, 3).unwrap();
        assert_eq!(upsample_nn(&down, 3).unwrap(), c);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Array::from_vec(vec![0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(softmax(&Array::from_vec(vec![-3.2])).unwrap().data(), &[1.0]);
        let y = softmax(&Array::from_vec(vec![1f64.ln(), 3f64.ln()])).unwrap();
        assert!(close(y.data(), &[0.25, 0.75], 1e-15));
        let big = softmax(&Array::from_vec(vec![1000.0, 1000.0])).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = Array::from_rows(&[vec![1.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(masked_cross_entropy(&perfect, &[Some(0)]).unwrap(), 0.0);

        let q = (-2.0f64).exp();
        let r = (1.0 - q) / 4.0;
        let p = Array::from_rows(&[vec![0.2; 5], vec![r, r, q, r, r]]).unwrap();
        let l = masked_cross_entropy(&p, &[None, Some(2)]).unwrap();
        assert!((l - 2.0).abs() < 1e-12);

        let u = Array::from_rows(&vec![vec![0.2; 5]; 3]).unwrap();
        let l = masked_cross_entropy(&u, &[Some(0), Some(3), Some(4)]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!((l - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Array::from_rows(&[vec![1.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let l = masked_cross_entropy(&p, &[Some(1)]).unwrap();
        assert!((l + PROB_FLOOR_LN).abs() < 1e-9);
    }
    const PROB_FLOOR_LN: f64 = -27.631021115928547;

    #[test]
    fn cross_entropy_all_masked_is_empty() {
        let p = Array::from_rows(&[vec![0.2; 5]]).unwrap();
        assert_eq!(masked_cross_entropy(&p, &[None]), Err(KernelError::EmptyLoss));
    }
}
