//! Adam with decoupled weight decay.
//!
//! The decay term is applied after the adaptive update, scaled by the
//! learning rate, and never enters the moment estimates. The optimizer
//! works over any named tensor list; the encoder passes its parameter set,
//! and small heads (e.g. the linear classifier) pass their own.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
}

impl Adam {
    /// Moment buffers are shaped exactly like the parameters they track.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .iter()
            .map(|t| Array2::zeros(t.value.raw_dim()))
            .collect();
        Adam {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update over every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Array2<f64>]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "gradient set mismatch");
        for (tensor, grad) in params.iter().zip(grads) {
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: tensor.name.clone(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, tensor) in params.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            ndarray::Zip::from(&mut tensor.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|theta, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *theta -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    *theta -= c.lr * c.weight_decay * *theta;
                });
        }
        Ok(())
    }
}
