//! Denoiser checkpoints stored as bundles: a header with the architecture,
//! schedule, training step count and provenance, then one tensor per
//! parameter block.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle::Bundle;
use crate::error::{HaloError, Result};

use super::denoiser::{Denoiser, DenoiserArch};
use super::schedule::ScheduleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    arch: DenoiserArch,
    schedule: ScheduleConfig,
    steps: usize,
    provenance: Value,
}

const KIND: &str = "denoiser";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub denoiser: Denoiser,
    pub schedule: ScheduleConfig,
    /// Optimiser steps taken to produce the weights.
    pub steps: usize,
    pub provenance: Value,
}

impl Checkpoint {
    pub fn to_bundle(&self) -> Result<Bundle> {
        let header = Header {
            kind: KIND.into(),
            arch: self.denoiser.arch,
            schedule: self.schedule,
            steps: self.steps,
            provenance: self.provenance.clone(),
        };
        let mut b = Bundle::new(serde_json::to_value(header)?);
        self.denoiser.params.push_blocks(&mut b);
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let h: Header = serde_json::from_value(b.header.clone())?;
        if h.kind != KIND {
            return Err(HaloError::Format(format!("expected a {KIND} checkpoint, found {}", h.kind)));
        }
        let mut params = h.arch.layout();
        params.fill_from(b)?;
        if b.tensors.len() != params.blocks().len() {
            return Err(HaloError::Format("checkpoint has extra tensors".into()));
        }
        Ok(Self {
            denoiser: Denoiser::from_params(h.arch, params)?,
            schedule: h.schedule,
            steps: h.steps,
            provenance: h.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&Bundle::load(path)?)
    }
}
