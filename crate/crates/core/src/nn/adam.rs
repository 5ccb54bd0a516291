//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::numcore::Tensor;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// `lr = 2e-4`, `β1 = 0`, `β2 = 0.9`.
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ascend,
    Descend,
}

/// Optimizer state for one parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Changes the step size for subsequent updates; moment estimates are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Gradients are validated before any parameter changes, so
    /// a failed step leaves both parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], direction: Direction) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::GradientCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NnError::GradientShape {
                    param: format!("param[{i}]"),
                    param_shape: p.shape().to_vec(),
                    grad_shape: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient {
                    param: format!("param[{i}]"),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(NnError::GradientCount {
                params: params.len(),
                grads: self.m.len(),
            });
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let sign = match direction {
            Direction::Ascend => -1.0,
            Direction::Descend => 1.0,
        };
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(md).zip(vd) {
                let gi = sign * gi;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
