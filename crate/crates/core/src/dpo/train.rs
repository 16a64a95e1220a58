//! Preference fine-tuning loop with winner/loser reward trendlines.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Condition, Denoiser, DiffusionSchedule, NoisePredictor};
use crate::error::{invalid, HaloError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::par::Exec;
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::loss::{eval_draw, record_gran_dpo, LossSetup, PairDraw, TrainingPair, VideoWeightMedian};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    /// Regularisation strength; the loss scale is `beta * T`.
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub log_every: usize,
    /// Size of the frozen evaluation subset for trendlines.
    pub eval_pairs: usize,
    /// Fixed `(t, eps)` draws averaged per evaluation pair.
    pub eval_draws: usize,
    pub video_weight_median: VideoWeightMedian,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            lr: 1e-6,
            steps: 4000,
            batch: 4,
            log_every: 100,
            eval_pairs: 64,
            eval_draws: 16,
            video_weight_median: VideoWeightMedian::Video,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub step: usize,
    pub winner_reward: f64,
    pub loser_reward: f64,
}

/// Writes `step,winner_reward,loser_reward` rows under a header line.
pub fn write_trend_csv<W: std::io::Write>(w: W, trend: &[TrendPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in trend {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trend_csv<R: std::io::Read>(r: R) -> Result<Vec<TrendPoint>> {
    let mut input = csv::Reader::from_reader(r);
    let mut trend = Vec::new();
    for row in input.deserialize() {
        trend.push(row?);
    }
    Ok(trend)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: Denoiser,
    pub trend: Vec<TrendPoint>,
    pub losses: Vec<f64>,
}

/// One frozen evaluation draw with the reference errors of both sides cached.
struct EvalDraw {
    draw: PairDraw,
    ref_w: f64,
    ref_l: f64,
}

struct EvalSet<'a> {
    pairs: Vec<&'a TrainingPair>,
    draws: Vec<Vec<EvalDraw>>,
}

fn sq_error(d: &Denoiser, x_t: &Tensor, cond: Condition, t: usize, eps: &Tensor) -> Result<f64> {
    Ok(eps.sub(&d.predict(x_t, cond, t)?)?.sq_norm())
}

impl<'a> EvalSet<'a> {
    fn new(
        pairs: &'a [TrainingPair],
        cfg: &DpoConfig,
        reference: &Denoiser,
        sched: &DiffusionSchedule,
        rng: &SeededRng,
        exec: Exec,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.derive("eval-choice").shuffle(&mut order);
        order.truncate(cfg.eval_pairs.clamp(1, pairs.len()));
        order.sort_unstable();
        let seed = rng.derive("eval-draws");
        let chosen: Vec<&TrainingPair> = order.iter().map(|&i| &pairs[i]).collect();
        let per_pair = cfg.eval_draws;
        let draws = exec.try_map_range(chosen.len(), |k| -> Result<Vec<EvalDraw>> {
            let p = chosen[k];
            let c = Condition::new(p.class);
            (0..per_pair)
                .map(|j| {
                    let draw = eval_draw(p, sched, &seed, k * per_pair + j)?;
                    let ref_w = sq_error(reference, &draw.x_w_t, c, draw.t, &draw.eps_w)?;
                    let ref_l = sq_error(reference, &draw.x_l_t, c, draw.t, &draw.eps_l)?;
                    Ok(EvalDraw { draw, ref_w, ref_l })
                })
                .collect()
        })?;
        Ok(Self { pairs: chosen, draws })
    }

    /// Mean implicit rewards `-beta_t * (own error - reference error)` per side.
    fn point(&self, step: usize, d: &Denoiser, beta_t: f64, exec: Exec) -> Result<TrendPoint> {
        let rewards = exec.try_map_range(self.pairs.len(), |k| -> Result<(f64, f64)> {
            let c = Condition::new(self.pairs[k].class);
            let (mut w, mut l) = (0.0, 0.0);
            for e in &self.draws[k] {
                let dr = &e.draw;
                w += -beta_t * (sq_error(d, &dr.x_w_t, c, dr.t, &dr.eps_w)? - e.ref_w);
                l += -beta_t * (sq_error(d, &dr.x_l_t, c, dr.t, &dr.eps_l)? - e.ref_l);
            }
            let m = self.draws[k].len() as f64;
            Ok((w / m, l / m))
        })?;
        let n = rewards.len() as f64;
        Ok(TrendPoint {
            step,
            winner_reward: rewards.iter().map(|r| r.0).sum::<f64>() / n,
            loser_reward: rewards.iter().map(|r| r.1).sum::<f64>() / n,
        })
    }
}

/// Fine-tunes a copy of `base` on `pairs`; `base` itself is the frozen reference.
pub fn train(
    pairs: &[TrainingPair],
    base: &Denoiser,
    sched: &DiffusionSchedule,
    setup: &LossSetup,
    cfg: &DpoConfig,
    rng: &SeededRng,
    exec: Exec,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(HaloError::EmptyDataset("no preference pairs to train on".into()));
    }
    if cfg.batch == 0 || cfg.log_every == 0 || cfg.eval_draws == 0 {
        return invalid("batch, log interval and evaluation draws must be positive");
    }
    setup.validate()?;
    for p in pairs {
        p.validate(&setup.grid)?;
        base.arch.latent.check(&p.winner)?;
    }
    let reference = base;
    let mut policy = base.clone();
    let eval = EvalSet::new(pairs, cfg, reference, sched, rng, exec)?;
    let mut trend = vec![eval.point(0, &policy, setup.beta_t, exec)?];
    let mut losses = Vec::with_capacity(cfg.steps);

    let mut opt = Adam::new(policy.params.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0usize;
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                rng.derive(&format!("epoch-{epoch}")).shuffle(&mut order);
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let parts = exec.try_map_range(batch.len(), |b| -> Result<(f64, Vec<f64>)> {
            let i = batch[b];
            let draw = PairDraw::sample(&pairs[i], sched, &rng.derive(&format!("step-{step}-{b}")))?;
            let mut tape = Tape::new(&policy.params);
            let total = record_gran_dpo(&mut tape, &policy, reference, &pairs[i], &draw, setup)?.total;
            Ok((tape.scalar(total), tape.backward(total)?))
        })?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; policy.params.len()];
        for (l, g) in &parts {
            loss += l * scale;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
        }
        if !loss.is_finite() {
            return Err(HaloError::NonFinite(format!("preference loss at step {step}")));
        }
        losses.push(loss);
        opt.step(policy.params.values_mut(), &grad)?;
        if step % cfg.log_every == 0 || step == cfg.steps {
            trend.push(eval.point(step, &policy, setup.beta_t, exec)?);
        }
    }
    Ok(TrainOutcome { denoiser: policy, trend, losses })
}
