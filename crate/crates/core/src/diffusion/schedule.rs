//! Linear-beta noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 50, beta_start: 1e-4, beta_end: 0.2 }
    }
}

/// Per-step coefficients, indexed by timestep `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig { steps, beta_start, beta_end } = config;
        if steps == 0 {
            return invalid("schedule needs at least one step");
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"));
        }
        let beta = |t: usize| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
            }
        };
        let alpha: Vec<f64> = (1..=steps).map(|t| 1.0 - beta(t)).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        // Posterior standard deviation of q(x_{t-1} | x_t, x_0).
        let sigma = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - alpha[i]) * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        Ok(Self { config, alpha, alpha_bar, sigma })
    }

    pub fn make(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleConfig { steps, beta_start, beta_end })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return invalid(format!("timestep {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}
