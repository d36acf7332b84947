use anysleep::numkernel::{conv1d, masked_cross_entropy, pool_avg, softmax, Array, Padding};
use proptest::prelude::*;

fn vec_of(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(x in vec_of(1..12), c in -50.0f64..50.0) {
        let y = softmax(&Array::from_vec(x.clone())).unwrap();
        prop_assert!((y.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(y.data().iter().all(|&v| v > 0.0));
        let shifted = softmax(&Array::from_vec(x.iter().map(|v| v + c).collect())).unwrap();
        for (a, b) in y.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_is_linear_in_its_input(
        x in vec_of(24..25),
        z in vec_of(24..25),
        w in vec_of(18..19),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        stride in 1usize..4,
    ) {
        let shape = vec![2, 12];
        let xa = Array::new(shape.clone(), x.clone()).unwrap();
        let za = Array::new(shape.clone(), z.clone()).unwrap();
        let mix = Array::new(shape, x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let w = Array::new(vec![3, 2, 3], w).unwrap();
        let bias = Array::zeros(&[3]);
        let lhs = conv1d(&mix, &w, &bias, stride, Padding::Same).unwrap();
        let cx = conv1d(&xa, &w, &bias, stride, Padding::Same).unwrap();
        let cz = conv1d(&za, &w, &bias, stride, Padding::Same).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cz.data()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-9);
        }
    }

    #[test]
    fn pooling_a_constant_is_exact(c in -1e6f64..1e6, t in 1usize..40, k in 1usize..10, s in 1usize..5) {
        prop_assume!(k <= t);
        let y = pool_avg(&Array::full(&[3, t], c), k, s).unwrap();
        prop_assert!(y.data().iter().all(|&v| v == c));
    }

    #[test]
    fn masked_rows_do_not_affect_the_loss(
        raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 2..8),
        noise in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 8),
        labels in prop::collection::vec(prop::option::of(0usize..5), 2..8),
    ) {
        let e = raw.len().min(labels.len());
        let labels = &labels[..e];
        prop_assume!(labels.iter().any(Option::is_some));
        let norm = |r: &Vec<f64>| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let base: Vec<Vec<f64>> = raw[..e].iter().map(norm).collect();
        let perturbed: Vec<Vec<f64>> = (0..e)
            .map(|i| if labels[i].is_none() { noise[i].clone() } else { base[i].clone() })
            .collect();
        let l1 = masked_cross_entropy(&Array::from_rows(&base).unwrap(), labels).unwrap();
        let l2 = masked_cross_entropy(&Array::from_rows(&perturbed).unwrap(), labels).unwrap();
        prop_assert_eq!(l1, l2);
    }
}

/// Direct evaluation of the correlation sum.
fn naive_conv(x: &[f64], cin: usize, t: usize, w: &[f64], cout: usize, k: usize, stride: usize, pad_left: usize, t_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; cout * t_out];
    for co in 0..cout {
        for j in 0..t_out {
            let mut s = 0.0;
            for ci in 0..cin {
                for kk in 0..k {
                    let idx = (j * stride + kk) as isize - pad_left as isize;
                    if idx >= 0 && (idx as usize) < t {
                        s += w[(co * cin + ci) * k + kk] * x[ci * t + idx as usize];
                    }
                }
            }
            y[co * t_out + j] = s;
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv_matches_direct_sum(
        cin in 1usize..5,
        cout in 1usize..10,
        k in 1usize..12,
        t in 12usize..140,
        stride in 1usize..4,
        seed in 0u64..1000,
    ) {
        let x: Vec<f64> = (0..cin * t).map(|i| ((i as u64 * 31 + seed) as f64 * 0.173).sin()).collect();
        let w: Vec<f64> = (0..cout * cin * k).map(|i| ((i as u64 * 17 + seed) as f64 * 0.311).cos()).collect();
        let y = conv1d(
            &Array::new(vec![cin, t], x.clone()).unwrap(),
            &Array::new(vec![cout, cin, k], w.clone()).unwrap(),
            &Array::zeros(&[cout]),
            stride,
            Padding::Same,
        )
        .unwrap();
        let total = k.saturating_sub(stride);
        let t_out = (t + total - k) / stride + 1;
        let expected = naive_conv(&x, cin, t, &w, cout, k, stride, total / 2, t_out);
        prop_assert_eq!(y.shape(), &[cout, t_out]);
        for (a, b) in y.data().iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
