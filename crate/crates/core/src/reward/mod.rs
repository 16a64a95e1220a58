//! Reward representation, the synthetic oracle, and the distilled patch model.

pub mod oracle;
pub mod records;
pub mod regressor;
pub mod vector;

pub use oracle::OracleReward;
pub use records::{read_raw_labels, read_records, write_records, LabelScale, RawLabelRecord, RewardRecord};
pub use regressor::{distill_patch_rm, DistillConfig, DistillReport, LabeledVideo, PatchRegressor, RegressorArch};
pub use vector::{
    normalize_label, regression_loss, PatchRewardGrid, RewardVector, DIMENSIONS, DIMENSION_NAMES, SCORE_MAX, SCORE_MIN,
};

use crate::error::Result;
use crate::grid::GridSpec;
use crate::tensor::Tensor;

/// Scores a video, and each cell of its patch grid, for a prompt class.
pub trait RewardModel: Sync {
    fn score_video(&self, class: usize, video: &Tensor) -> Result<RewardVector>;
    fn score_patches(&self, class: usize, video: &Tensor, grid: &GridSpec) -> Result<PatchRewardGrid>;
}

/// Video scores from one model, patch scores from another.
pub struct CombinedReward<'a> {
    pub video: &'a dyn RewardModel,
    pub patches: &'a dyn RewardModel,
}

impl RewardModel for CombinedReward<'_> {
    fn score_video(&self, class: usize, video: &Tensor) -> Result<RewardVector> {
        self.video.score_video(class, video)
    }

    fn score_patches(&self, class: usize, video: &Tensor, grid: &GridSpec) -> Result<PatchRewardGrid> {
        self.patches.score_patches(class, video, grid)
    }
}
