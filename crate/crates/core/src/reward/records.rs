//! Reward-record JSON lines: one object per `(prompt_id, video_id)` holding
//! the five video scores and the row-major patch scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::jsonl;

use super::vector::{normalize_label, PatchRewardGrid, RewardVector, DIMENSIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRecord {
    pub prompt_id: String,
    pub video_id: String,
    pub video: RewardVector,
    pub patches: Vec<RewardVector>,
}

impl RewardRecord {
    pub fn patch_grid(&self, rows: usize, cols: usize) -> Result<PatchRewardGrid> {
        PatchRewardGrid::new(rows, cols, self.patches.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.video.validate()?;
        self.patches.iter().try_for_each(|p| p.validate())
    }
}

/// Scale of externally produced labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScale {
    /// Already on 1..4.
    Native,
    /// 0..10 annotator scores, mapped linearly onto 1..4.
    ZeroToTen,
}

/// An externally annotated record whose scores may still be on 0..10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLabelRecord {
    pub prompt_id: String,
    pub video_id: String,
    pub video: [f64; DIMENSIONS],
    pub patches: Vec<[f64; DIMENSIONS]>,
}

impl RawLabelRecord {
    pub fn normalize(&self, scale: LabelScale) -> Result<RewardRecord> {
        let conv = |s: &[f64; DIMENSIONS]| -> Result<RewardVector> {
            let mut out = *s;
            if scale == LabelScale::ZeroToTen {
                for v in &mut out {
                    *v = normalize_label(*v)?;
                }
            }
            RewardVector::from_array(out)
        };
        Ok(RewardRecord {
            prompt_id: self.prompt_id.clone(),
            video_id: self.video_id.clone(),
            video: conv(&self.video)?,
            patches: self.patches.iter().map(conv).collect::<Result<_>>()?,
        })
    }
}

pub fn write_records(path: &Path, records: &[RewardRecord]) -> Result<()> {
    jsonl::write(path, None::<&()>, records)
}

pub fn read_records(path: &Path, cells: usize) -> Result<Vec<RewardRecord>> {
    let records: Vec<RewardRecord> = jsonl::read_all(path)?;
    for r in &records {
        r.validate()?;
        if r.patches.len() != cells {
            return shape_err(format!("record {}/{} has {} patches, want {cells}", r.prompt_id, r.video_id, r.patches.len()));
        }
    }
    Ok(records)
}

pub fn read_raw_labels(path: &Path, scale: LabelScale) -> Result<Vec<RewardRecord>> {
    let raw: Vec<RawLabelRecord> = jsonl::read_all(path)?;
    raw.iter().map(|r| r.normalize(scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_raw_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.jsonl");
        let v = RewardVector::from_array([1.234567891, 2.0, 3.5, 4.0, 1.0]).unwrap();
        let rec = RewardRecord { prompt_id: "p0".into(), video_id: "v1".into(), video: v, patches: vec![v; 9] };
        write_records(&path, std::slice::from_ref(&rec)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("1.234567891"));
        assert_eq!(read_records(&path, 9).unwrap(), vec![rec]);
        assert!(read_records(&path, 4).is_err());

        let raw = RawLabelRecord {
            prompt_id: "p".into(),
            video_id: "v".into(),
            video: [0.0, 10.0, 5.0, 5.0, 5.0],
            patches: vec![[10.0; 5]],
        };
        let n = raw.normalize(LabelScale::ZeroToTen).unwrap();
        assert_eq!(n.video.to_array(), [1.0, 4.0, 2.5, 2.5, 2.5]);
        assert!(raw.normalize(LabelScale::Native).is_err());
    }
}
