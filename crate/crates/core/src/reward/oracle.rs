//! Distance-based synthetic reward oracle.
//!
//! Each prompt class owns a target latent. A video (or patch) scores
//! `1 + 3 exp(-d / (lambda s_k))` on dimension `k`, where `d` is the mean
//! squared distance to the target (restricted to the patch for patch
//! scores) and `s_k` a fixed per-dimension scale. Distances at or beyond
//! `SATURATION * lambda * s_k` score exactly 1.

use crate::error::{invalid, HaloError, Result};
use crate::grid::GridSpec;
use crate::tensor::Tensor;

use super::vector::{PatchRewardGrid, RewardVector, DIMENSIONS};
use super::RewardModel;

pub const DIMENSION_SCALES: [f64; DIMENSIONS] = [1.0, 0.85, 1.15, 0.95, 1.05];
pub const SATURATION: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReward {
    targets: Vec<Tensor>,
    lambda: f64,
}

impl OracleReward {
    pub fn new(targets: Vec<Tensor>, lambda: f64) -> Result<Self> {
        if targets.is_empty() {
            return invalid("oracle needs at least one target");
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("oracle lambda must be positive, got {lambda}"));
        }
        for t in &targets[1..] {
            targets[0].check_same_shape(t, "oracle targets")?;
        }
        Ok(Self { targets, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn targets(&self) -> &[Tensor] {
        &self.targets
    }

    pub fn target(&self, class: usize) -> Result<&Tensor> {
        self.targets.get(class).ok_or(HaloError::UnknownClass(class))
    }

    /// Reward vector for mean squared distance `d`.
    pub fn reward_for_distance(&self, d: f64) -> RewardVector {
        let mut s = [0.0; DIMENSIONS];
        for (v, scale) in s.iter_mut().zip(DIMENSION_SCALES) {
            let width = self.lambda * scale;
            *v = if d >= SATURATION * width { 1.0 } else { (1.0 + 3.0 * (-d / width).exp()).clamp(1.0, 4.0) };
        }
        RewardVector::from_array(s).expect("scores in range by construction")
    }

    pub fn video_distance(&self, class: usize, video: &Tensor) -> Result<f64> {
        video.mean_sq_dist(self.target(class)?)
    }

    pub fn patch_distances(&self, class: usize, video: &Tensor, grid: &GridSpec) -> Result<Vec<f64>> {
        let target = self.target(class)?;
        target.check_same_shape(video, "oracle patch score")?;
        grid.indices()
            .map(|idx| grid.slice_like(video, idx)?.mean_sq_dist(&grid.slice_like(target, idx)?))
            .collect()
    }
}

impl RewardModel for OracleReward {
    fn score_video(&self, class: usize, video: &Tensor) -> Result<RewardVector> {
        Ok(self.reward_for_distance(self.video_distance(class, video)?))
    }

    fn score_patches(&self, class: usize, video: &Tensor, grid: &GridSpec) -> Result<PatchRewardGrid> {
        let cells = self.patch_distances(class, video, grid)?.into_iter().map(|d| self.reward_for_distance(d)).collect();
        PatchRewardGrid::new(grid.rows, grid.cols, cells)
    }
}
