//! Run configuration: one TOML file covering every stage.
//!
//! Unknown keys are rejected. The digest is the SHA-256 of the canonical
//! JSON form (sorted keys, compact) of everything except `paths`, so the same
//! experiment gets the same digest wherever its files live.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::MedianScope;
use crate::diffusion::{BaseTrainConfig, DenoiserArch, LatentShape, ScheduleConfig};
use crate::dpo::DpoConfig;
use crate::error::{HaloError, Result};
use crate::grid::GridSpec;
use crate::reward::{DistillConfig, LabelScale};
use crate::synthetic::WorldConfig;

pub const SEED_ENV: &str = "HALO_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 3, cols: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        let a = DenoiserArch::default();
        Self { hidden: a.hidden, time_dim: a.time_dim, cond_dim: a.cond_dim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training prompts kept after similarity filtering.
    pub prompts: usize,
    /// Videos from the synthetic "real" distribution for base training.
    pub train_videos: usize,
    /// Videos of varied quality annotated for reward distillation.
    pub label_videos: usize,
    pub samples_per_prompt: usize,
    /// Near-duplicate threshold for prompt filtering.
    pub tau: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { prompts: 40, train_videos: 512, label_videos: 600, samples_per_prompt: 5, tau: 0.85 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Ancestral,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Only used by DDIM.
    pub ddim_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { kind: SamplerKind::Ancestral, ddim_steps: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub lambda: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { lambda: 0.2 }
    }
}

/// Which model supplies the patch rewards used to build pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSource {
    #[default]
    Distilled,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub median_scope: MedianScope,
    pub patch_source: PatchSource,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { median_scope: MedianScope::Global, patch_source: PatchSource::Distilled }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Videos sampled from each of the base and aligned models.
    pub eval_videos: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { eval_videos: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Every stage reads and writes inside this directory.
    pub out_dir: PathBuf,
    /// Externally produced patch labels for the training videos, replacing the oracle teacher.
    pub external_labels: Option<PathBuf>,
    pub external_label_scale: LabelScale,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("halo-run"), external_labels: None, external_label_scale: LabelScale::ZeroToTen }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: usize,
    pub latent: LatentShape,
    pub schedule: ScheduleConfig,
    pub grid: GridConfig,
    pub denoiser: DenoiserConfig,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub base: BaseTrainConfig,
    pub sampler: SamplerConfig,
    pub oracle: OracleConfig,
    pub distill: DistillConfig,
    pub pairs: PairConfig,
    pub dpo: DpoConfig,
    pub analysis: AnalysisConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 4,
            latent: LatentShape::default(),
            schedule: ScheduleConfig::default(),
            grid: GridConfig::default(),
            denoiser: DenoiserConfig::default(),
            world: WorldConfig::default(),
            data: DataConfig::default(),
            base: BaseTrainConfig::default(),
            sampler: SamplerConfig::default(),
            oracle: OracleConfig::default(),
            distill: DistillConfig::default(),
            pairs: PairConfig::default(),
            dpo: DpoConfig::default(),
            analysis: AnalysisConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Eight prompts and short schedules; finishes in seconds.
    pub fn demo() -> Self {
        let mut c = Self {
            data: DataConfig { prompts: 8, train_videos: 128, label_videos: 64, samples_per_prompt: 5, tau: 0.85 },
            base: BaseTrainConfig { steps: 1500, lr: 1e-3, final_lr: 1e-5, batch: 8 },
            ..Self::default()
        };
        c.distill.epochs = 15;
        c.dpo.steps = 200;
        c.dpo.log_every = 20;
        c.dpo.eval_pairs = 16;
        c.dpo.eval_draws = 4;
        c.analysis.eval_videos = 16;
        c.paths.out_dir = PathBuf::from("halo-demo");
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HaloError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HaloError::Config(e.to_string()))
    }

    /// Reads `path` and resolves it like [`RunConfig::resolve`].
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HaloError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::resolve(&text, overrides)
    }

    /// Parses TOML text, applies `key=value` overrides (dotted keys, TOML
    /// values) and then the seed environment variable, and validates.
    pub fn resolve(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| HaloError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| HaloError::Config(e.to_string()))?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| HaloError::Config(format!("{SEED_ENV}={v} is not a u64")))?;
        }
        Ok(())
    }

    pub fn arch(&self) -> DenoiserArch {
        DenoiserArch {
            latent: self.latent,
            hidden: self.denoiser.hidden,
            time_dim: self.denoiser.time_dim,
            cond_dim: self.denoiser.cond_dim,
            classes: self.classes,
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.latent.height, self.latent.width, self.grid.rows, self.grid.cols)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HaloError::Config(m));
        self.arch().validate()?;
        self.grid_spec()?;
        crate::diffusion::DiffusionSchedule::new(self.schedule)?;
        if self.classes == 0 || self.data.prompts == 0 || self.data.train_videos == 0 || self.data.label_videos == 0 {
            return bad("classes, prompts, train_videos and label_videos must be positive".into());
        }
        if self.data.samples_per_prompt < 2 {
            return bad("samples_per_prompt must be at least 2 to form pairs".into());
        }
        if !(self.data.tau > 0.0 && self.data.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.data.tau));
        }
        if self.sampler.kind == SamplerKind::Ddim && !(1..=self.schedule.steps).contains(&self.sampler.ddim_steps) {
            return bad(format!("ddim_steps must be in 1..={}", self.schedule.steps));
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.oracle.lambda) || !positive(self.dpo.beta) {
            return bad("oracle lambda and dpo beta must be positive".into());
        }
        if self.base.batch == 0 || self.dpo.batch == 0 || self.distill.batch == 0 || self.analysis.eval_videos == 0 {
            return bad("batch sizes and eval_videos must be positive".into());
        }
        Ok(())
    }

    /// Compact JSON with sorted keys, `paths` excluded.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("paths");
        }
        Ok(serde_json::to_string(&v)?)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    /// Every dotted key accepted by [`RunConfig::load`] overrides, with its default.
    pub fn keys() -> Vec<(String, String)> {
        let table = toml::Table::try_from(RunConfig::default()).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &table, &mut out);
        out.push(("paths.external_labels".into(), "(unset)".into()));
        out.sort();
        out
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.to_string())),
        }
    }
}

/// Sets `a.b.c = value`; the value is parsed as TOML, falling back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HaloError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| HaloError::Config(format!("{key}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
