//! Combined video- and patch-level preference optimisation.

pub mod loss;
pub mod train;

pub use loss::{
    gran_dpo_grad, gran_dpo_loss, implicit_reward, indicator_f, pair_weight, patch_dpo_loss, record_gran_dpo,
    side_advantage, video_dpo_loss, weight_or_limit, GranDpoNodes, LossSetup, PairDraw, TrainingPair,
    VideoWeightMedian,
};
pub use train::{read_trend_csv, train, write_trend_csv, DpoConfig, TrainOutcome, TrendPoint};
