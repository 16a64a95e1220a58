//! Agreement between the video-level and mean-patch preference of every
//! same-prompt pair of videos.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, HaloError, Result};
use crate::reward::{PatchRewardGrid, RewardRecord};

use super::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyLabel {
    Consistent,
    /// One of the two comparisons is an exact tie.
    None,
    Inverse,
}

impl ConsistencyLabel {
    pub const ALL: [ConsistencyLabel; 3] = [ConsistencyLabel::Consistent, ConsistencyLabel::None, ConsistencyLabel::Inverse];

    pub fn name(self) -> &'static str {
        match self {
            ConsistencyLabel::Consistent => "consistent",
            ConsistencyLabel::None => "none",
            ConsistencyLabel::Inverse => "inverse",
        }
    }
}

/// Mean of the scalarized patch rewards.
pub fn patch_mean_scalar(grid: &PatchRewardGrid) -> f64 {
    mean(&grid.scalarized())
}

/// Ties are exact equality on either comparison.
pub fn classify_consistency(v_a: f64, v_b: f64, pmean_a: f64, pmean_b: f64) -> ConsistencyLabel {
    if v_a == v_b || pmean_a == pmean_b {
        ConsistencyLabel::None
    } else if (v_a > v_b) == (pmean_a > pmean_b) {
        ConsistencyLabel::Consistent
    } else {
        ConsistencyLabel::Inverse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    pub consistent: usize,
    pub none: usize,
    pub inverse: usize,
}

impl ConsistencyCounts {
    pub fn add(&mut self, label: ConsistencyLabel) {
        *self.slot(label) += 1;
    }

    fn slot(&mut self, label: ConsistencyLabel) -> &mut usize {
        match label {
            ConsistencyLabel::Consistent => &mut self.consistent,
            ConsistencyLabel::None => &mut self.none,
            ConsistencyLabel::Inverse => &mut self.inverse,
        }
    }

    pub fn count(&self, label: ConsistencyLabel) -> usize {
        match label {
            ConsistencyLabel::Consistent => self.consistent,
            ConsistencyLabel::None => self.none,
            ConsistencyLabel::Inverse => self.inverse,
        }
    }

    pub fn total(&self) -> usize {
        self.consistent + self.none + self.inverse
    }

    pub fn proportion(&self, label: ConsistencyLabel) -> f64 {
        self.count(label) as f64 / self.total() as f64
    }
}

/// Per-video `(video score, mean patch score)` grouped by prompt, in prompt-id order.
fn grouped(records: &[RewardRecord], rows: usize, cols: usize) -> Result<BTreeMap<&str, Vec<(f64, f64)>>> {
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let v = r.video.scalarize()?;
        let p = patch_mean_scalar(&r.patch_grid(rows, cols)?);
        groups.entry(r.prompt_id.as_str()).or_default().push((v, p));
    }
    Ok(groups)
}

/// Counts labels over all unordered same-prompt pairs.
pub fn consistency_distribution(records: &[RewardRecord], rows: usize, cols: usize) -> Result<ConsistencyCounts> {
    if records.is_empty() {
        return Err(HaloError::EmptyDataset("no reward records to compare".into()));
    }
    let mut counts = ConsistencyCounts::default();
    for (prompt, scores) in grouped(records, rows, cols)? {
        if scores.len() < 2 {
            return invalid(format!("prompt {prompt} has a single video; consistency needs pairs"));
        }
        for a in 0..scores.len() {
            for b in a + 1..scores.len() {
                counts.add(classify_consistency(scores[a].0, scores[b].0, scores[a].1, scores[b].1));
            }
        }
    }
    Ok(counts)
}
