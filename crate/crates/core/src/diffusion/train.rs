//! Base denoiser training on the plain denoising objective.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::denoiser::{Condition, Denoiser};
use super::process::{base_loss_on_tape, NoiseDraw};
use super::schedule::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Learning rate reached at the last step under cosine annealing.
    pub final_lr: f64,
    pub batch: usize,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self { steps: 25000, lr: 1e-3, final_lr: 1e-5, batch: 16 }
    }
}

/// Trains `d` in place on `(class, x0)` examples; returns the per-step mean loss.
pub fn train_base(
    d: &mut Denoiser,
    data: &[(usize, Tensor)],
    sched: &DiffusionSchedule,
    cfg: &BaseTrainConfig,
    rng: &SeededRng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return invalid("base training needs at least one example");
    }
    if cfg.batch == 0 {
        return invalid("batch size must be positive");
    }
    let mut opt = Adam::new(d.params.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut order_rng = rng.derive("order");
    let mut noise_rng = rng.derive("noise");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut terms = Vec::with_capacity(cfg.batch);
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let grad = {
            let mut tape = Tape::new(&d.params);
            for &i in &batch {
                let (class, x0) = &data[i];
                let draw = NoiseDraw::sample(d.arch.latent, sched, &mut noise_rng);
                terms.push(base_loss_on_tape(d, &mut tape, x0, Condition::new(*class), &draw, sched)?);
            }
            let total = tape.sum(&terms)?;
            let mean = tape.scale(total, 1.0 / cfg.batch as f64);
            losses.push(tape.scalar(mean));
            tape.backward(mean)?
        };
        let progress = step as f64 / (cfg.steps.max(2) - 1) as f64;
        let lr = cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.step_with_lr(d.params.values_mut(), &grad, lr)?;
    }
    Ok(losses)
}
