use serde::{Deserialize, Serialize};

use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam expects {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    left: m.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            if g.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    left: m.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = beta1 * md[j] + (1.0 - beta1) * gj;
                vd[j] = beta2 * vd[j] + (1.0 - beta2) * gj * gj;
                let m_hat = md[j] / bias1;
                let v_hat = vd[j] / bias2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            check_finite("adam", pd)?;
        }
        Ok(())
    }
}
