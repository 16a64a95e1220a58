//! Forward noising, the simplified training loss, and the two samplers.

use crate::error::{invalid, Result};
use crate::rng::SeededRng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

use super::denoiser::{Condition, Denoiser, LatentShape, NoisePredictor};
use super::schedule::DiffusionSchedule;

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Recovers `x0` from `x_t` when the injected noise is known.
pub fn invert_noise(x_t: &Tensor, t: usize, eps: &Tensor, sched: &DiffusionSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x_t.axpby(1.0 / ab.sqrt(), eps, -(1.0 - ab).sqrt() / ab.sqrt())
}

pub fn standard_normal(shape: LatentShape, rng: &mut SeededRng) -> Tensor {
    Tensor::new(&shape.dims(), rng.normal_vec(shape.len())).expect("latent dims")
}

/// One draw of `(t, eps)` for the denoising objective.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Tensor,
}

impl NoiseDraw {
    pub fn sample(shape: LatentShape, sched: &DiffusionSchedule, rng: &mut SeededRng) -> Self {
        let t = 1 + rng.below(sched.steps() as u64) as usize;
        Self { t, eps: standard_normal(shape, rng) }
    }
}

/// `|eps - eps_theta(x_t, c, t)|^2` recorded on `tape`.
pub fn base_loss_on_tape(
    d: &Denoiser,
    tape: &mut Tape,
    x0: &Tensor,
    cond: Condition,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> Result<NodeId> {
    let x_t = forward_noise(x0, draw.t, &draw.eps, sched)?;
    let pred = d.forward_on_tape(tape, &x_t, cond, draw.t)?;
    let n = d.arch.latent.len();
    let eps = tape.input(draw.eps.clone().reshape(&[n])?);
    let diff = tape.sub(eps, pred)?;
    Ok(tape.sq_norm(diff))
}

/// Samples `t` and `eps` from `rng` and returns the unweighted denoising loss.
pub fn base_loss(
    d: &Denoiser,
    x0: &Tensor,
    cond: Condition,
    rng: &mut SeededRng,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    d.arch.latent.check(x0)?;
    let draw = NoiseDraw::sample(d.arch.latent, sched, rng);
    let mut tape = Tape::new(&d.params);
    let loss = base_loss_on_tape(d, &mut tape, x0, cond, &draw, sched)?;
    Ok(tape.scalar(loss))
}

/// One reverse step of the ancestral sampler; `z` is ignored at `t = 1`.
pub fn ancestral_step(
    x_t: &Tensor,
    eps_pred: &Tensor,
    z: &Tensor,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mean = x_t.axpby(1.0 / a.sqrt(), eps_pred, -coef / a.sqrt())?;
    if t > 1 {
        mean.axpby(1.0, z, sched.sigma(t))
    } else {
        Ok(mean)
    }
}

/// Full-length ancestral sampling from `x_T ~ N(0, I)`.
pub fn ancestral_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    shape: LatentShape,
    cond: Condition,
    rng: &mut SeededRng,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    let mut x = standard_normal(shape, rng);
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict(&x, cond, t)?;
        let z = if t > 1 { standard_normal(shape, rng) } else { Tensor::zeros(&shape.dims()) };
        x = ancestral_step(&x, &eps, &z, t, sched)?;
    }
    x.check_finite("ancestral sample")?;
    Ok(x)
}

/// Uniformly spaced timesteps `t_k = floor((k+1) T / steps)`, ascending.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return invalid(format!("DDIM needs 1 <= steps <= {total}, got {steps}"));
    }
    Ok((0..steps).map(|k| (k + 1) * total / steps).collect())
}

/// Deterministic (eta = 0) DDIM sampling; `rng` only supplies `x_T`.
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    shape: LatentShape,
    cond: Condition,
    rng: &mut SeededRng,
    sched: &DiffusionSchedule,
    steps: usize,
) -> Result<Tensor> {
    let ts = ddim_timesteps(sched.steps(), steps)?;
    let mut x = standard_normal(shape, rng);
    for k in (0..ts.len()).rev() {
        let t = ts[k];
        let t_prev = if k == 0 { 0 } else { ts[k - 1] };
        let eps = model.predict(&x, cond, t)?;
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t_prev);
        let x0_hat = x.axpby(1.0 / ab.sqrt(), &eps, -(1.0 - ab).sqrt() / ab.sqrt())?;
        x = x0_hat.axpby(ab_prev.sqrt(), &eps, (1.0 - ab_prev).sqrt())?;
    }
    x.check_finite("ddim sample")?;
    Ok(x)
}
