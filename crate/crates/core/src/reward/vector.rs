//! Five-dimension reward scores on the 1..4 scale.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 4.0;
pub const DIMENSIONS: usize = 5;
pub const DIMENSION_NAMES: [&str; DIMENSIONS] =
    ["visual_quality", "temporal_consistency", "dynamic_degree", "t2v_alignment", "factual_consistency"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardVector {
    pub visual_quality: f64,
    pub temporal_consistency: f64,
    pub dynamic_degree: f64,
    pub t2v_alignment: f64,
    pub factual_consistency: f64,
}

impl RewardVector {
    pub fn from_array(s: [f64; DIMENSIONS]) -> Result<Self> {
        let r = Self {
            visual_quality: s[0],
            temporal_consistency: s[1],
            dynamic_degree: s[2],
            t2v_alignment: s[3],
            factual_consistency: s[4],
        };
        r.validate()?;
        Ok(r)
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::from_array([v; DIMENSIONS])
    }

    pub fn to_array(&self) -> [f64; DIMENSIONS] {
        [self.visual_quality, self.temporal_consistency, self.dynamic_degree, self.t2v_alignment, self.factual_consistency]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in DIMENSION_NAMES.iter().zip(self.to_array()) {
            if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                return invalid(format!("{name} score {v} outside [1, 4]"));
            }
        }
        Ok(())
    }

    /// Plain mean of the five dimension scores.
    pub fn scalarize(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.to_array().iter().sum::<f64>() / DIMENSIONS as f64)
    }
}

/// Maps a 0..10 label onto the 1..4 scale linearly.
pub fn normalize_label(s: f64) -> Result<f64> {
    if !(0.0..=10.0).contains(&s) {
        return invalid(format!("label {s} outside [0, 10]"));
    }
    Ok(1.0 + 3.0 * s / 10.0)
}

/// Per-patch reward vectors in row-major `(i, j)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRewardGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<RewardVector>,
}

impl PatchRewardGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<RewardVector>) -> Result<Self> {
        if cells.len() != rows * cols {
            return shape_err(format!("{rows}x{cols} grid needs {} cells, got {}", rows * cols, cells.len()));
        }
        for c in &cells {
            c.validate()?;
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn get(&self, i: usize, j: usize) -> &RewardVector {
        &self.cells[i * self.cols + j]
    }

    pub fn scalarized(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.to_array().iter().sum::<f64>() / DIMENSIONS as f64).collect()
    }
}

/// Mean squared score difference over every cell and dimension.
pub fn regression_loss(pred: &PatchRewardGrid, labels: &PatchRewardGrid) -> Result<f64> {
    if pred.rows != labels.rows || pred.cols != labels.cols {
        return shape_err(format!("{}x{} vs {}x{} grids", pred.rows, pred.cols, labels.rows, labels.cols));
    }
    let mut total = 0.0;
    for (p, g) in pred.cells.iter().zip(&labels.cells) {
        for (a, b) in p.to_array().iter().zip(g.to_array()) {
            total += (a - b) * (a - b);
        }
    }
    Ok(total / (pred.cells.len() * DIMENSIONS) as f64)
}
