//! Reporting analyses over reward corpora.

pub mod consistency;
pub mod levels;
pub mod report;
pub mod stats;

pub use consistency::{
    classify_consistency, consistency_distribution, patch_mean_scalar, ConsistencyCounts, ConsistencyLabel,
};
pub use levels::{histogram, inner_variance, sorted_levels, LevelStats, LevelSummary, HIST_BINS, LEVELS};
pub use report::{emit_report, Correlation, Report, ReportInput, REPORT_FILES};
pub use stats::{median, pearson, population_variance, spearman};
