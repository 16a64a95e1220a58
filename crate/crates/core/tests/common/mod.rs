#![allow(dead_code)]

use halo_core::data::MarginStats;
use halo_core::diffusion::{Denoiser, DenoiserArch, DiffusionSchedule, LatentShape};
use halo_core::dpo::{LossSetup, PairDraw, TrainingPair, VideoWeightMedian};
use halo_core::grid::GridSpec;
use halo_core::rng::SeededRng;
use halo_core::tensor::Tensor;

/// A denoiser small enough for exhaustive finite differences.
pub fn tiny_arch() -> DenoiserArch {
    DenoiserArch {
        latent: LatentShape { frames: 1, height: 3, width: 3, channels: 1 },
        hidden: 8,
        time_dim: 4,
        cond_dim: 2,
        classes: 2,
    }
}

pub fn tiny_grid() -> GridSpec {
    GridSpec::new(3, 3, 3, 3).unwrap()
}

/// Reference plus a perturbed policy; every block of the policy is randomised.
pub fn tiny_models(rng: &mut SeededRng) -> (Denoiser, Denoiser) {
    let arch = tiny_arch();
    let mut reference = Denoiser::init(arch, rng).unwrap();
    for name in ["out.w", "out.b", "skip.w", "skip.b"] {
        reference.params.init_normal(name, 0.3, rng);
    }
    let mut policy = reference.clone();
    for v in policy.params.values_mut() {
        *v += 0.05 * rng.normal();
    }
    (policy, reference)
}

pub fn random_latent(shape: LatentShape, rng: &mut SeededRng) -> Tensor {
    Tensor::new(&shape.dims(), rng.normal_vec(shape.len())).unwrap()
}

/// Patch rewards on [1, 4]; `ties` copies a cell from winner to loser with this probability.
pub fn random_pair(arch: &DenoiserArch, cells: usize, ties: f64, rng: &mut SeededRng) -> TrainingPair {
    let p_w: Vec<f64> = (0..cells).map(|_| 1.0 + 3.0 * rng.uniform()).collect();
    let p_l: Vec<f64> = p_w.iter().map(|&p| if rng.uniform() < ties { p } else { 1.0 + 3.0 * rng.uniform() }).collect();
    TrainingPair {
        class: rng.below(arch.classes as u64) as usize,
        winner: random_latent(arch.latent, rng),
        loser: random_latent(arch.latent, rng),
        v_w: 3.1,
        v_l: 2.4,
        p_w,
        p_l,
    }
}

pub fn setup(beta_t: f64, grid: GridSpec, m_v: f64, m_p: f64) -> LossSetup {
    LossSetup { beta_t, grid, stats: MarginStats { m_v, m_p }, video_median: VideoWeightMedian::Video }
}

pub fn small_schedule() -> DiffusionSchedule {
    DiffusionSchedule::make(10, 1e-3, 0.2).unwrap()
}

pub fn draw(pair: &TrainingPair, sched: &DiffusionSchedule, seed: u64) -> PairDraw {
    PairDraw::sample(pair, sched, &SeededRng::new(seed)).unwrap()
}

fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Straight-line re-implementation of the denoiser forward pass.
pub fn naive_forward(d: &Denoiser, x: &Tensor, class: usize, t: usize) -> Vec<f64> {
    let a = d.arch;
    let p = d.params.values();
    let blk = |name: &str| d.params.block(name).unwrap().offset;
    let mut input: Vec<f64> = x.data().to_vec();
    let half = a.time_dim / 2;
    let mut temb = vec![0.0; a.time_dim];
    for k in 0..half {
        let f = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        temb[k] = (t as f64 * f).sin();
        temb[half + k] = (t as f64 * f).cos();
    }
    input.extend(temb);
    let table = blk("cond_table") + class * a.cond_dim;
    input.extend_from_slice(&p[table..table + a.cond_dim]);
    let dense = |w: usize, b: usize, rows: usize, inp: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|r| {
                let mut acc = p[b + r];
                for (c, v) in inp.iter().enumerate() {
                    acc += p[w + r * inp.len() + c] * v;
                }
                acc
            })
            .collect()
    };
    let h1: Vec<f64> = dense(blk("l1.w"), blk("l1.b"), a.hidden, &input).into_iter().map(swish).collect();
    let h2: Vec<f64> = dense(blk("l2.w"), blk("l2.b"), a.hidden, &h1).into_iter().map(swish).collect();
    let y = dense(blk("out.w"), blk("out.b"), a.latent.len(), &h2);
    let gain = dense(blk("skip.w"), blk("skip.b"), 1, &h2)[0];
    y.iter().zip(x.data()).map(|(y, x)| y + gain * x).collect()
}
