//! Video-level and patch-level preference losses against a frozen reference.
//!
//! For one side of a pair the advantage is
//! `|eps - eps_theta(x_t)|^2 - |eps - eps_ref(x_t)|^2`. The video term is
//! `-log sigmoid(-beta_T (adv_w - adv_l))`; each patch term restricts both
//! squared errors to one grid cell (the denoisers still see the full latent)
//! and multiplies the advantage gap by the sign of the patch preference.
//! The combined objective weights every term by its clamped reward margin.

use serde::{Deserialize, Serialize};

use crate::data::MarginStats;
use crate::diffusion::{forward_noise, Condition, Denoiser, DiffusionSchedule, NoisePredictor};
use crate::error::{invalid, shape_err, Result};
use crate::grid::{GridSpec, PatchIndex};
use crate::rng::SeededRng;
use crate::tape::{log_sigmoid, NodeId, Tape};
use crate::tensor::Tensor;

/// A preference pair with its latents attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub class: usize,
    pub winner: Tensor,
    pub loser: Tensor,
    pub v_w: f64,
    pub v_l: f64,
    pub p_w: Vec<f64>,
    pub p_l: Vec<f64>,
}

impl TrainingPair {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.winner.check_same_shape(&self.loser, "pair latents")?;
        if self.p_w.len() != grid.cells() || self.p_l.len() != grid.cells() {
            return shape_err(format!("pair has {}/{} patch rewards for {} cells", self.p_w.len(), self.p_l.len(), grid.cells()));
        }
        Ok(())
    }

    /// The same pair with roles and annotations exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            class: self.class,
            winner: self.loser.clone(),
            loser: self.winner.clone(),
            v_w: self.v_l,
            v_l: self.v_w,
            p_w: self.p_l.clone(),
            p_l: self.p_w.clone(),
        }
    }
}

/// Shared timestep and independent noises for both sides of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDraw {
    pub t: usize,
    pub eps_w: Tensor,
    pub eps_l: Tensor,
    pub x_w_t: Tensor,
    pub x_l_t: Tensor,
}

impl PairDraw {
    pub fn sample(pair: &TrainingPair, sched: &DiffusionSchedule, rng: &SeededRng) -> Result<Self> {
        let t = 1 + rng.derive("t").below(sched.steps() as u64) as usize;
        let dims = pair.winner.dims().to_vec();
        let eps_w = Tensor::new(&dims, rng.derive("eps-w").normal_vec(pair.winner.len()))?;
        let eps_l = Tensor::new(&dims, rng.derive("eps-l").normal_vec(pair.loser.len()))?;
        Ok(Self {
            t,
            x_w_t: forward_noise(&pair.winner, t, &eps_w, sched)?,
            x_l_t: forward_noise(&pair.loser, t, &eps_l, sched)?,
            eps_w,
            eps_l,
        })
    }

    /// Roles exchanged, matching [`TrainingPair::swapped`].
    pub fn swapped(&self) -> Self {
        Self {
            t: self.t,
            eps_w: self.eps_l.clone(),
            eps_l: self.eps_w.clone(),
            x_w_t: self.x_l_t.clone(),
            x_l_t: self.x_w_t.clone(),
        }
    }
}

/// Which median normalises the video-pair weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoWeightMedian {
    /// `m_V` for video pairs, `m_P` for patch pairs.
    #[default]
    Video,
    /// `m_P` for both, as the combined-loss formula is literally printed.
    Patch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSetup {
    /// The product beta * T.
    pub beta_t: f64,
    pub grid: GridSpec,
    pub stats: MarginStats,
    pub video_median: VideoWeightMedian,
}

impl LossSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_t > 0.0 && self.beta_t.is_finite()) {
            return invalid(format!("beta_T must be positive, got {}", self.beta_t));
        }
        if !(self.stats.m_v >= 0.0 && self.stats.m_p >= 0.0) {
            return invalid("margin medians must be non-negative");
        }
        Ok(())
    }

    pub fn video_weight(&self, pair: &TrainingPair) -> f64 {
        let m = match self.video_median {
            VideoWeightMedian::Video => self.stats.m_v,
            VideoWeightMedian::Patch => self.stats.m_p,
        };
        weight_or_limit(pair.v_w, pair.v_l, m)
    }

    pub fn patch_weight(&self, pair: &TrainingPair, cell: usize) -> f64 {
        weight_or_limit(pair.p_w[cell], pair.p_l[cell], self.stats.m_p)
    }
}

/// Sign of the patch preference: +1, 0 or -1.
pub fn indicator_f(p_w: f64, p_l: f64) -> f64 {
    if p_w > p_l {
        1.0
    } else if p_w < p_l {
        -1.0
    } else {
        0.0
    }
}

/// `max(min(|r_w - r_l| / m, 1), 0)`.
pub fn pair_weight(r_w: f64, r_l: f64, m: f64) -> Result<f64> {
    if m.is_nan() || m <= 0.0 {
        return invalid(format!("margin normaliser must be positive, got {m}"));
    }
    Ok(((r_w - r_l).abs() / m).clamp(0.0, 1.0))
}

/// [`pair_weight`], with a zero median treated as its limit: any positive
/// margin gets full weight.
pub fn weight_or_limit(r_w: f64, r_l: f64, m: f64) -> f64 {
    if m > 0.0 {
        pair_weight(r_w, r_l, m).expect("positive median")
    } else if r_w != r_l {
        1.0
    } else {
        0.0
    }
}

/// `eps - prediction`, computed the same way on and off the tape.
fn residual(eps: &Tensor, pred: &Tensor) -> Result<Tensor> {
    eps.axpby(1.0, pred, -1.0)
}

fn gathered_sq(values: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&k| values[k] * values[k]).sum()
}

/// Advantage of `d` over `reference` for one noised latent.
pub fn side_advantage(d: &Denoiser, reference: &Denoiser, x_t: &Tensor, cond: Condition, t: usize, eps: &Tensor) -> Result<f64> {
    x_t.check_same_shape(eps, "side_advantage")?;
    let own = residual(eps, &d.predict(x_t, cond, t)?)?;
    let base = residual(eps, &reference.predict(x_t, cond, t)?)?;
    Ok(own.sq_norm() - base.sq_norm())
}

/// Reference residuals are constants for the policy tape.
struct ReferenceResiduals {
    w: Tensor,
    l: Tensor,
}

impl ReferenceResiduals {
    fn compute(reference: &Denoiser, pair: &TrainingPair, draw: &PairDraw) -> Result<Self> {
        let cond = Condition::new(pair.class);
        Ok(Self {
            w: residual(&draw.eps_w, &reference.predict(&draw.x_w_t, cond, draw.t)?)?,
            l: residual(&draw.eps_l, &reference.predict(&draw.x_l_t, cond, draw.t)?)?,
        })
    }
}

/// Policy residual nodes for both sides.
struct PolicyResiduals {
    w: NodeId,
    l: NodeId,
}

fn record_policy(tape: &mut Tape, d: &Denoiser, pair: &TrainingPair, draw: &PairDraw) -> Result<PolicyResiduals> {
    let cond = Condition::new(pair.class);
    let n = pair.winner.len();
    let pred_w = d.forward_on_tape(tape, &draw.x_w_t, cond, draw.t)?;
    let pred_l = d.forward_on_tape(tape, &draw.x_l_t, cond, draw.t)?;
    let eps_w = tape.input(draw.eps_w.clone().reshape(&[n])?);
    let eps_l = tape.input(draw.eps_l.clone().reshape(&[n])?);
    Ok(PolicyResiduals { w: tape.sub(eps_w, pred_w)?, l: tape.sub(eps_l, pred_l)? })
}

/// `-log sigmoid(-scale * ((own_w - own_l) - ref_gap))` on the tape.
fn record_logistic(tape: &mut Tape, own_w: NodeId, own_l: NodeId, ref_gap: f64, scale: f64) -> Result<NodeId> {
    let gap = tape.sub(own_w, own_l)?;
    let shift = tape.input(Tensor::scalar(-ref_gap));
    let adv_gap = tape.add(gap, shift)?;
    let z = tape.scale(adv_gap, -scale);
    let ls = tape.log_sigmoid(z)?;
    Ok(tape.scale(ls, -1.0))
}

/// Node ids of every recorded term.
pub struct GranDpoNodes {
    pub total: NodeId,
    pub video: NodeId,
    /// `None` where the patch term was folded into a constant (zero weight or zero sign).
    pub patches: Vec<Option<NodeId>>,
}

/// Records the combined objective for one pair on `tape` (which must borrow `d.params`).
pub fn record_gran_dpo(
    tape: &mut Tape,
    d: &Denoiser,
    reference: &Denoiser,
    pair: &TrainingPair,
    draw: &PairDraw,
    setup: &LossSetup,
) -> Result<GranDpoNodes> {
    setup.validate()?;
    pair.validate(&setup.grid)?;
    let refs = ReferenceResiduals::compute(reference, pair, draw)?;
    let own = record_policy(tape, d, pair, draw)?;

    let sq_w = tape.sq_norm(own.w);
    let sq_l = tape.sq_norm(own.l);
    let video = record_logistic(tape, sq_w, sq_l, refs.w.sq_norm() - refs.l.sq_norm(), setup.beta_t)?;
    let w_video = setup.video_weight(pair);
    let weighted_video = tape.scale(video, w_video);

    let mut terms = vec![weighted_video];
    let mut constant = 0.0;
    let mut patches = Vec::with_capacity(setup.grid.cells());
    for idx in setup.grid.indices() {
        let cell = setup.grid.flat(idx);
        let f = indicator_f(pair.p_w[cell], pair.p_l[cell]);
        let w = setup.patch_weight(pair, cell);
        if f == 0.0 || w == 0.0 {
            // -log sigmoid(0) with no dependence on the parameters
            constant += w * std::f64::consts::LN_2;
            patches.push(None);
            continue;
        }
        let ids = setup.grid.patch_indices(pair.winner.dims(), idx)?;
        let ref_gap = gathered_sq(refs.w.data(), &ids) - gathered_sq(refs.l.data(), &ids);
        let pw = tape.gather(own.w, ids.clone())?;
        let pl = tape.gather(own.l, ids)?;
        let pw = tape.sq_norm(pw);
        let pl = tape.sq_norm(pl);
        let term = record_logistic(tape, pw, pl, ref_gap, setup.beta_t * f)?;
        patches.push(Some(term));
        terms.push(tape.scale(term, w));
    }
    if constant != 0.0 {
        terms.push(tape.input(Tensor::scalar(constant)));
    }
    let total = tape.sum(&terms)?;
    Ok(GranDpoNodes { total, video, patches })
}

fn scalar_logistic(own_gap: f64, scale: f64) -> Result<f64> {
    Ok(-log_sigmoid(-scale * own_gap)?)
}

/// Video-level term for one pair.
pub fn video_dpo_loss(d: &Denoiser, reference: &Denoiser, pair: &TrainingPair, draw: &PairDraw, setup: &LossSetup) -> Result<f64> {
    let cond = Condition::new(pair.class);
    let adv_w = side_advantage(d, reference, &draw.x_w_t, cond, draw.t, &draw.eps_w)?;
    let adv_l = side_advantage(d, reference, &draw.x_l_t, cond, draw.t, &draw.eps_l)?;
    scalar_logistic(adv_w - adv_l, setup.beta_t)
}

/// Patch-level term for cell `idx`; exactly `ln 2` when the patch rewards tie.
pub fn patch_dpo_loss(
    d: &Denoiser,
    reference: &Denoiser,
    pair: &TrainingPair,
    draw: &PairDraw,
    idx: PatchIndex,
    setup: &LossSetup,
) -> Result<f64> {
    setup.grid.check_index(idx)?;
    pair.validate(&setup.grid)?;
    let cell = setup.grid.flat(idx);
    let f = indicator_f(pair.p_w[cell], pair.p_l[cell]);
    let cond = Condition::new(pair.class);
    let ids = setup.grid.patch_indices(pair.winner.dims(), idx)?;
    let side = |x_t: &Tensor, eps: &Tensor| -> Result<f64> {
        let own = residual(eps, &d.predict(x_t, cond, draw.t)?)?;
        let base = residual(eps, &reference.predict(x_t, cond, draw.t)?)?;
        Ok(gathered_sq(own.data(), &ids) - gathered_sq(base.data(), &ids))
    };
    let gap = side(&draw.x_w_t, &draw.eps_w)? - side(&draw.x_l_t, &draw.eps_l)?;
    scalar_logistic(gap, setup.beta_t * f)
}

/// The combined weighted objective for one pair.
pub fn gran_dpo_loss(d: &Denoiser, reference: &Denoiser, pair: &TrainingPair, draw: &PairDraw, setup: &LossSetup) -> Result<f64> {
    let mut tape = Tape::new(&d.params);
    let nodes = record_gran_dpo(&mut tape, d, reference, pair, draw, setup)?;
    Ok(tape.scalar(nodes.total))
}

/// Loss and gradient with respect to `d.params`.
pub fn gran_dpo_grad(
    d: &Denoiser,
    reference: &Denoiser,
    pair: &TrainingPair,
    draw: &PairDraw,
    setup: &LossSetup,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(&d.params);
    let nodes = record_gran_dpo(&mut tape, d, reference, pair, draw, setup)?;
    Ok((tape.scalar(nodes.total), tape.backward(nodes.total)?))
}

/// Implicit reward `-beta_T * advantage` of one side.
pub fn implicit_reward(
    d: &Denoiser,
    reference: &Denoiser,
    x_t: &Tensor,
    cond: Condition,
    t: usize,
    eps: &Tensor,
    beta_t: f64,
) -> Result<f64> {
    Ok(-beta_t * side_advantage(d, reference, x_t, cond, t, eps)?)
}

/// Deterministic draw for evaluation pair `k` under `seed`.
pub fn eval_draw(pair: &TrainingPair, sched: &DiffusionSchedule, seed: &SeededRng, k: usize) -> Result<PairDraw> {
    PairDraw::sample(pair, sched, &seed.derive(&format!("eval-{k}")))
}
