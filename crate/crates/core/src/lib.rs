//! Patch- and video-level preference alignment for a toy conditional
//! latent-video diffusion model.
//!
//! The crate is organised bottom-up: [`tensor`], [`tape`], [`params`],
//! [`optim`] and [`rng`] form the numeric substrate; [`diffusion`] holds the
//! denoiser and samplers; [`grid`] splits latents into spatial patches;
//! [`reward`] scores videos and patches; [`data`] builds preference pairs;
//! [`dpo`] trains against a frozen reference; [`analysis`] computes the
//! reporting statistics; [`pipeline`] wires the stages together for the CLI.

pub mod analysis;
pub mod bundle;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod dpo;
pub mod error;
pub mod grid;
pub mod jsonl;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod params;
pub mod reward;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use error::{HaloError, Result};
