//! Stage orchestration over a run directory.
//!
//! Each stage reads fixed file names from the run directory, writes its own,
//! and records a provenance file (`provenance/<stage>.json`) with the config
//! digest, the seed, SHA-256 digests of its inputs and outputs, and the wall
//! time. Before a stage runs, every input is checked against the provenance
//! of the stage that produced it; a digest mismatch means the pipeline is
//! stale and is refused unless forced.

mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{HaloError, Result};
use crate::par::Exec;

pub mod files {
    pub const PROMPTS: &str = "prompts.jsonl";
    pub const TARGETS: &str = "targets.bundle";
    pub const TRAIN_VIDEOS: &str = "train_videos.bundle";
    pub const LABEL_VIDEOS: &str = "label_videos.bundle";
    pub const BASE: &str = "base.ckpt";
    pub const BASE_LOSS: &str = "base_loss.csv";
    pub const SAMPLES: &str = "samples.bundle";
    pub const REWARDS: &str = "rewards.jsonl";
    pub const LABELS: &str = "labels.jsonl";
    pub const REGRESSOR: &str = "regressor.bundle";
    pub const DISTILL_LOG: &str = "distill.csv";
    pub const DISTILL_REPORT: &str = "distill.json";
    pub const SCORED: &str = "scored.jsonl";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const ALIGNED: &str = "aligned.ckpt";
    pub const TREND: &str = "trend.csv";
    pub const REPORT_DIR: &str = "report";
    pub const PROVENANCE_DIR: &str = "provenance";
}

use files::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    TrainBase,
    Sample,
    Reward,
    DistillRm,
    BuildPairs,
    Align,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::TrainBase,
        Stage::Sample,
        Stage::Reward,
        Stage::DistillRm,
        Stage::BuildPairs,
        Stage::Align,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainBase => "train-base",
            Stage::Sample => "sample",
            Stage::Reward => "reward",
            Stage::DistillRm => "distill-rm",
            Stage::BuildPairs => "build-pairs",
            Stage::Align => "align",
            Stage::Analyze => "analyze",
        }
    }

    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::GenData => &[],
            Stage::TrainBase => &[TRAIN_VIDEOS],
            Stage::Sample => &[BASE, PROMPTS],
            Stage::Reward => &[SAMPLES, TARGETS, LABEL_VIDEOS],
            Stage::DistillRm => &[LABELS, REWARDS, LABEL_VIDEOS, SAMPLES],
            Stage::BuildPairs => &[REWARDS, REGRESSOR, SAMPLES],
            Stage::Align => &[PAIRS, SAMPLES, BASE],
            Stage::Analyze => &[SCORED, BASE, ALIGNED, TARGETS, TREND, DISTILL_REPORT],
        }
    }

    pub fn outputs(self) -> Vec<String> {
        let fixed: &[&str] = match self {
            Stage::GenData => &[PROMPTS, TARGETS, TRAIN_VIDEOS, LABEL_VIDEOS],
            Stage::TrainBase => &[BASE, BASE_LOSS],
            Stage::Sample => &[SAMPLES],
            Stage::Reward => &[REWARDS, LABELS],
            Stage::DistillRm => &[REGRESSOR, DISTILL_LOG, DISTILL_REPORT],
            Stage::BuildPairs => &[SCORED, PAIRS],
            Stage::Align => &[ALIGNED, TREND],
            Stage::Analyze => {
                return crate::analysis::REPORT_FILES.iter().map(|f| format!("{REPORT_DIR}/{f}")).collect();
            }
        };
        fixed.iter().map(|s| s.to_string()).collect()
    }

    /// The stage whose outputs include `file`.
    pub fn producer(file: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.outputs().iter().any(|o| o == file))
    }
}

impl std::str::FromStr for Stage {
    type Err = HaloError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| HaloError::InvalidArgument(format!("unknown stage {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceRecord {
    pub stage: Stage,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| HaloError::Provenance(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub record: ProvenanceRecord,
}

/// A configured run over one directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    digest: String,
    dir: PathBuf,
    exec: Exec,
    force: bool,
}

impl Pipeline {
    pub fn new(config: RunConfig, exec: Exec, force: bool) -> Result<Self> {
        config.validate()?;
        let digest = config.digest()?;
        let dir = config.paths.out_dir.clone();
        Ok(Self { config, digest, dir, exec, force })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn provenance_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(PROVENANCE_DIR).join(format!("{}.json", stage.name()))
    }

    pub fn provenance(&self, stage: Stage) -> Result<ProvenanceRecord> {
        let path = self.provenance_path(stage);
        let text = fs::read_to_string(&path)
            .map_err(|_| HaloError::Provenance(format!("no provenance record for stage {}", stage.name())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Verifies every input of `stage` and returns their digests.
    fn check_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut digests = BTreeMap::new();
        let mut upstream = BTreeMap::new();
        for &file in stage.inputs() {
            let path = self.path(file);
            if !path.is_file() {
                return Err(HaloError::Provenance(format!(
                    "missing input {} (run stage {} first)",
                    path.display(),
                    Stage::producer(file).map_or("?", Stage::name)
                )));
            }
            let digest = file_digest(&path)?;
            let producer = Stage::producer(file).expect("every input has a producer");
            match self.provenance(producer) {
                Ok(rec) => {
                    upstream.insert(producer, rec.config_digest.clone());
                    if !self.force {
                        if rec.config_digest != self.digest {
                            return Err(HaloError::Provenance(format!(
                                "{file} was produced under config {} but the current config is {}; rerun {} or pass --force",
                                short(&rec.config_digest),
                                short(&self.digest),
                                producer.name()
                            )));
                        }
                        if rec.outputs.get(file) != Some(&digest) {
                            return Err(HaloError::Provenance(format!(
                                "{file} changed since stage {} wrote it; rerun it or pass --force",
                                producer.name()
                            )));
                        }
                    }
                }
                Err(e) if !self.force => return Err(e),
                Err(_) => {}
            }
            digests.insert(file.to_string(), digest);
        }
        if stage == Stage::Analyze {
            let distinct: BTreeSet<&String> = upstream.values().collect();
            if distinct.len() > 1 {
                return Err(HaloError::Provenance("analysis inputs come from runs with different configs".into()));
            }
        }
        Ok(digests)
    }

    /// Runs one stage after checking its inputs; writes its provenance record.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.check_inputs(stage)?;
        fs::create_dir_all(self.dir.join(PROVENANCE_DIR))?;
        let started = Instant::now();
        let ctx = stages::Ctx { p: self, inputs: &inputs };
        match stage {
            Stage::GenData => stages::gen_data(&ctx)?,
            Stage::TrainBase => stages::train_base(&ctx)?,
            Stage::Sample => stages::sample(&ctx)?,
            Stage::Reward => stages::reward(&ctx)?,
            Stage::DistillRm => stages::distill_rm(&ctx)?,
            Stage::BuildPairs => stages::build_pairs(&ctx)?,
            Stage::Align => stages::align(&ctx)?,
            Stage::Analyze => stages::analyze(&ctx)?,
        }
        let wall_time_secs = started.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for f in stage.outputs() {
            outputs.insert(f.clone(), file_digest(&self.path(&f))?);
        }
        let record = ProvenanceRecord {
            stage,
            config_digest: self.digest.clone(),
            seed: self.config.seed,
            inputs,
            outputs,
            wall_time_secs,
        };
        fs::write(self.provenance_path(stage), serde_json::to_string_pretty(&record)? + "\n")?;
        Ok(StageOutcome { stage, record })
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}
