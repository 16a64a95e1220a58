//! MLP noise predictor conditioned on timestep and prompt class.
//!
//! The latent is flattened and concatenated with a sinusoidal timestep
//! embedding and a learned per-class embedding, then passed through two
//! swish hidden layers and an affine read-out reshaped to the latent dims.
//! A scalar gain read from the last hidden layer carries `x_t` straight to
//! the output; the hidden bottleneck alone cannot represent that near-identity
//! map at this latent size.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::params::ParamVector;
use crate::rng::SeededRng;
use crate::tape::{Linear, NodeId, Tape};
use crate::tensor::Tensor;

/// Latent extents: frames x height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LatentShape {
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, t: &Tensor) -> Result<()> {
        if t.dims() != self.dims() {
            return shape_err(format!("expected latent {:?}, got {:?}", self.dims(), t.dims()));
        }
        Ok(())
    }
}

impl Default for LatentShape {
    fn default() -> Self {
        Self { frames: 4, height: 12, width: 12, channels: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserArch {
    pub latent: LatentShape,
    pub hidden: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub classes: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self { latent: LatentShape::default(), hidden: 64, time_dim: 16, cond_dim: 8, classes: 4 }
    }
}

pub const MAX_PARAMS: usize = 100_000;

impl DenoiserArch {
    pub fn input_dim(&self) -> usize {
        self.latent.len() + self.time_dim + self.cond_dim
    }

    pub fn layout(&self) -> ParamVector {
        let n = self.latent.len();
        ParamVector::layout()
            .block("cond_table", &[self.classes, self.cond_dim])
            .block("l1.w", &[self.hidden, self.input_dim()])
            .block("l1.b", &[self.hidden])
            .block("l2.w", &[self.hidden, self.hidden])
            .block("l2.b", &[self.hidden])
            .block("out.w", &[n, self.hidden])
            .block("out.b", &[n])
            .block("skip.w", &[1, self.hidden])
            .block("skip.b", &[1])
            .zeros()
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent.is_empty() || self.hidden == 0 || self.classes == 0 {
            return invalid("denoiser extents must be positive");
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return invalid("time embedding dimension must be even and positive");
        }
        let n = self.param_count();
        if n > MAX_PARAMS {
            return invalid(format!("denoiser has {n} parameters, limit is {MAX_PARAMS}"));
        }
        Ok(())
    }
}

/// Prompt-class conditioning; the embedding lives in the denoiser's table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Condition {
    pub class: usize,
}

impl Condition {
    pub fn new(class: usize) -> Self {
        Self { class }
    }
}

/// Sinusoidal features of timestep `t` (sin half, then cos half).
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// Anything that predicts the injected noise of a noised latent.
pub trait NoisePredictor: Sync {
    fn predict(&self, x_t: &Tensor, cond: Condition, t: usize) -> Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub arch: DenoiserArch,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    l1: Linear,
    l2: Linear,
    out: Linear,
    skip: Linear,
    table: usize,
}

impl Denoiser {
    /// Hidden layers drawn from `N(0, 1/fan_in)`, biases zero, read-out and skip gain zero.
    pub fn init(arch: DenoiserArch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let mut params = arch.layout();
        params.init_normal("cond_table", 1.0, rng);
        params.init_normal("l1.w", 1.0 / (arch.input_dim() as f64).sqrt(), rng);
        params.init_normal("l2.w", 1.0 / (arch.hidden as f64).sqrt(), rng);
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: DenoiserArch, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if !params.same_layout(&arch.layout()) {
            return shape_err("parameter layout does not match the architecture");
        }
        Ok(Self { arch, params })
    }

    fn layers(&self) -> Layers {
        let p = &self.params;
        Layers {
            l1: Linear::from_blocks(p, "l1.w", "l1.b").expect("layout"),
            l2: Linear::from_blocks(p, "l2.w", "l2.b").expect("layout"),
            out: Linear::from_blocks(p, "out.w", "out.b").expect("layout"),
            skip: Linear::from_blocks(p, "skip.w", "skip.b").expect("layout"),
            table: p.block("cond_table").expect("layout").offset,
        }
    }

    pub fn condition_embedding(&self, cond: Condition) -> Result<Tensor> {
        if cond.class >= self.arch.classes {
            return invalid(format!("class {} outside table of {}", cond.class, self.arch.classes));
        }
        let off = self.layers().table + cond.class * self.arch.cond_dim;
        Tensor::new(&[self.arch.cond_dim], self.params.values()[off..off + self.arch.cond_dim].to_vec())
    }

    /// Records the forward pass on `tape`, which must borrow `self.params`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x_t: &Tensor, cond: Condition, t: usize) -> Result<NodeId> {
        self.arch.latent.check(x_t)?;
        if cond.class >= self.arch.classes {
            return invalid(format!("class {} outside table of {}", cond.class, self.arch.classes));
        }
        let layers = self.layers();
        let n = self.arch.latent.len();
        let x = tape.input(x_t.clone().reshape(&[n])?);
        let temb = tape.input(Tensor::new(&[self.arch.time_dim], time_embedding(t, self.arch.time_dim))?);
        let cemb = tape.param(layers.table + cond.class * self.arch.cond_dim, &[self.arch.cond_dim])?;
        let h = tape.concat(&[x, temb, cemb]);
        let h = tape.affine(h, layers.l1)?;
        let h = tape.swish(h);
        let h = tape.affine(h, layers.l2)?;
        let h = tape.swish(h);
        let y = tape.affine(h, layers.out)?;
        let gain = tape.affine(h, layers.skip)?;
        let carried = tape.scale_by(x, gain)?;
        tape.add(y, carried)
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x_t: &Tensor, cond: Condition, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_on_tape(&mut tape, x_t, cond, t)?;
        let pred = tape.value(out).clone().reshape(&self.arch.latent.dims())?;
        pred.check_finite("denoiser output")?;
        Ok(pred)
    }
}
