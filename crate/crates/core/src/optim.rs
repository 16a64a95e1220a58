//! Adaptive-moment optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, HaloError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update of `params` in place using the configured learning rate.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grad, lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return shape_err(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            ));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(HaloError::NonFinite("optimizer gradient".into()));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.steps += 1;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
