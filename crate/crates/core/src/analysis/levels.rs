//! Within-video patch dispersion and the sorted-level distributions.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, HaloError, Result};
use crate::reward::{PatchRewardGrid, SCORE_MAX, SCORE_MIN};

use super::stats::{mean, population_variance};

/// Patches per video the level analysis is defined for.
pub const LEVELS: usize = 9;
pub const HIST_BINS: usize = 30;

/// Population variance of the scalarized patch rewards.
pub fn inner_variance(grid: &PatchRewardGrid) -> f64 {
    population_variance(&grid.scalarized()).expect("grids are never empty")
}

/// Counts over `HIST_BINS` equal bins spanning the score range; the top
/// edge belongs to the last bin.
pub fn histogram(values: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; HIST_BINS];
    let width = (SCORE_MAX - SCORE_MIN) / HIST_BINS as f64;
    for &v in values {
        let k = (((v - SCORE_MIN) / width).floor().max(0.0) as usize).min(HIST_BINS - 1);
        bins[k] += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// `levels[k]` summarises the k-th smallest patch reward of every video.
    pub levels: Vec<LevelSummary>,
}

impl LevelStats {
    pub fn means(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mean).collect()
    }
}

/// Sorts each video's nine scalarized patch rewards ascending and
/// aggregates every rank across the corpus.
pub fn sorted_levels(grids: &[PatchRewardGrid]) -> Result<LevelStats> {
    if grids.is_empty() {
        return Err(HaloError::EmptyDataset("no patch grids for the level analysis".into()));
    }
    let mut columns: Vec<Vec<f64>> = (0..LEVELS).map(|_| Vec::with_capacity(grids.len())).collect();
    for g in grids {
        if g.cells.len() != LEVELS {
            return shape_err(format!("level analysis needs {LEVELS} patches, got {}", g.cells.len()));
        }
        let mut s = g.scalarized();
        s.sort_by(f64::total_cmp);
        for (col, v) in columns.iter_mut().zip(s) {
            col.push(v);
        }
    }
    let levels = columns
        .iter()
        .map(|col| LevelSummary {
            count: col.len(),
            mean: mean(col),
            std: population_variance(col).expect("nonempty").sqrt(),
            histogram: histogram(col),
        })
        .collect();
    Ok(LevelStats { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardVector;

    fn grid(values: &[f64]) -> PatchRewardGrid {
        let cells = values.iter().map(|&v| RewardVector::uniform(v).unwrap()).collect();
        PatchRewardGrid::new(3, 3, cells).unwrap()
    }

    #[test]
    fn variance_cases() {
        assert_eq!(inner_variance(&grid(&[2.0; 9])), 0.0);
        let g = PatchRewardGrid::new(2, 2, vec![
            RewardVector::uniform(1.0).unwrap(),
            RewardVector::uniform(4.0).unwrap(),
            RewardVector::uniform(1.0).unwrap(),
            RewardVector::uniform(4.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(inner_variance(&g), 2.25);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[1.0, 1.09, 1.1, 3.99, 4.0]);
        assert_eq!(h.len(), HIST_BINS);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[HIST_BINS - 1], 2);
        assert_eq!(h.iter().sum::<usize>(), 5);
    }

    #[test]
    fn levels_of_uniform_and_spread_videos() {
        let flat = sorted_levels(&[grid(&[2.0; 9]), grid(&[3.0; 9])]).unwrap();
        assert!(flat.levels.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(flat.levels[0].mean, 2.5);
        assert_eq!(flat.levels[0].std, 0.5);

        let spread: Vec<f64> = [5, 2, 9, 1, 7, 3, 8, 4, 6].iter().map(|&k| 1.0 + 3.0 * (k - 1) as f64 / 8.0).collect();
        let s = sorted_levels(&[grid(&spread)]).unwrap();
        assert_eq!(s.levels[0].mean, 1.0);
        assert_eq!(s.levels[8].mean, 4.0);
        assert!(s.means().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn errors() {
        assert!(sorted_levels(&[]).is_err());
        let small = PatchRewardGrid::new(1, 2, vec![RewardVector::uniform(2.0).unwrap(); 2]).unwrap();
        assert!(sorted_levels(&[small]).is_err());
    }
}
