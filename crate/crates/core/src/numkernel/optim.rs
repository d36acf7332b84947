//! AMSGrad variant of Adam.
//!
//! Per parameter element, with bias-corrected moments:
//!
//! ```text
//! m     = b1 m + (1 - b1) g
//! v     = b2 v + (1 - b2) g^2
//! v_max = max(v_max, v / (1 - b2^t))
//! theta = theta - lr * (m / (1 - b1^t)) / (sqrt(v_max) + eps)
//! ```

use serde::{Deserialize, Serialize};

use super::{Array, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    v_hat_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AmsGradConfig,
    step: u64,
    slots: Vec<Moments>,
}

impl OptimizerState {
    /// One moment slot per parameter, sized by element count.
    pub fn new(config: AmsGradConfig, sizes: &[usize]) -> Self {
        let slots = sizes
            .iter()
            .map(|&n| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                v_hat_max: vec![0.0; n],
            })
            .collect();
        Self {
            config,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn v_hat_max(&self, slot: usize) -> &[f64] {
        &self.slots[slot].v_hat_max
    }

    /// Applies one update. All gradients are validated before any parameter
    /// changes, so a rejected step leaves both parameters and state intact.
    pub fn step(
        &mut self,
        names: &[&str],
        params: &mut [&mut Array],
        grads: &[&Array],
    ) -> Result<(), KernelError> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(KernelError::Dimension(format!(
                "optimizer tracks {} parameters, got {} values and {} gradients",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            if p.shape() != g.shape() || p.len() != self.slots[i].m.len() {
                return Err(KernelError::Dimension(format!(
                    "parameter {name}: value {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(KernelError::NonFiniteGradient(name.to_string()));
            }
        }
        self.step += 1;
        let AmsGradConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let pd = p.data_mut();
            for (j, &gv) in g.data().iter().enumerate() {
                s.m[j] = beta1 * s.m[j] + (1.0 - beta1) * gv;
                s.v[j] = beta2 * s.v[j] + (1.0 - beta2) * gv * gv;
                let v_hat = s.v[j] / c2;
                if v_hat > s.v_hat_max[j] {
                    s.v_hat_max[j] = v_hat;
                }
                pd[j] -= lr * (s.m[j] / c1) / (s.v_hat_max[j].sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Array {
        Array::from_vec(vec![v])
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = OptimizerState::new(AmsGradConfig::default(), &[3]);
        let mut p = Array::from_vec(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let g = Array::zeros(&[3]);
        for _ in 0..5 {
            st.step(&["p"], &mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AmsGradConfig {
            lr: 1e-3,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &[1]);
        let mut p = one(0.5);
        st.step(&["p"], &mut [&mut p], &[&one(2.0)]).unwrap();
        let expected = 0.5 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn vmax_is_monotone_and_step_counts() {
        let mut st = OptimizerState::new(AmsGradConfig::default(), &[2]);
        let mut p = Array::from_vec(vec![0.0, 0.0]);
        let mut prev = vec![0.0, 0.0];
        for (i, g) in [[1.0, -3.0], [1.0, -3.0], [0.1, 5.0], [0.0, 0.0]].iter().enumerate() {
            st.step(&["p"], &mut [&mut p], &[&Array::from_vec(g.to_vec())]).unwrap();
            assert_eq!(st.step_count(), i as u64 + 1);
            for (a, b) in st.v_hat_max(0).iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = st.v_hat_max(0).to_vec();
        }
    }

    /// With b1 = b2 = 0 the update is `lr * g / (max_{s<=t} |g_s| + eps)`.
    #[test]
    fn zero_betas_match_scripted_closed_form() {
        let cfg = AmsGradConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
        };
        let mut st = OptimizerState::new(cfg, &[1]);
        let mut p = one(1.0);
        let grads = [2.0f64, -0.5, 4.0];
        let mut expected = 1.0;
        let mut running_max: f64 = 0.0;
        for g in grads {
            running_max = running_max.max(g.abs());
            expected -= 0.1 * g / (running_max + 1e-8);
            st.step(&["p"], &mut [&mut p], &[&one(g)]).unwrap();
            assert!((p.data()[0] - expected).abs() < 1e-14);
        }
        // 1 - 0.1 - (-0.025) - 0.1
        assert!((expected - 0.825).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let mut st = OptimizerState::new(AmsGradConfig::default(), &[1, 1]);
        let mut a = one(1.0);
        let mut b = one(2.0);
        let err = st
            .step(&["enc.0.conv.w", "enc.0.conv.b"], &mut [&mut a, &mut b], &[&one(1.0), &one(f64::NAN)])
            .unwrap_err();
        assert!(err.to_string().contains("enc.0.conv.b"), "{err}");
        assert_eq!(st.step_count(), 0);
        assert_eq!(a.data()[0], 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = OptimizerState::new(AmsGradConfig::default(), &[2]);
        let mut p = Array::from_vec(vec![0.0, 0.0]);
        assert!(st.step(&["p"], &mut [&mut p], &[&one(1.0)]).is_err());
    }
}
