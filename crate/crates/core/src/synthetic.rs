//! Desk-scale synthetic world: per-class target latents, a "real video"
//! distribution around them, and templated prompt text.

use serde::{Deserialize, Serialize};

use crate::diffusion::LatentShape;
use crate::error::{invalid, Result};
use crate::grid::GridSpec;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Per-element noise around the target in the training videos.
    pub noise_std: f64,
    /// Probability that a patch of a training video carries a local defect.
    pub defect_prob: f64,
    /// Standard deviation of a defect's constant offset.
    pub defect_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { noise_std: 0.25, defect_prob: 0.25, defect_scale: 0.8 }
    }
}

/// Smooth travelling-wave pattern per class.
pub fn make_targets(shape: LatentShape, classes: usize, rng: &SeededRng) -> Vec<Tensor> {
    (0..classes)
        .map(|k| {
            let mut r = rng.derive(&format!("target-{k}"));
            let amp = 0.8 + 0.4 * r.uniform();
            let ky = 0.5 + r.uniform();
            let kx = 0.5 + r.uniform();
            let phase = 2.0 * std::f64::consts::PI * r.uniform();
            let speed = 0.3 + 0.4 * r.uniform();
            let offset = 0.4 * (r.uniform() - 0.5);
            let LatentShape { frames, height, width, channels } = shape;
            let mut data = Vec::with_capacity(shape.len());
            for f in 0..frames {
                for y in 0..height {
                    for x in 0..width {
                        for c in 0..channels {
                            let arg = 2.0 * std::f64::consts::PI * (kx * x as f64 / width as f64 + ky * y as f64 / height as f64)
                                + phase
                                + speed * f as f64
                                + 0.5 * c as f64;
                            data.push(offset + amp * arg.sin());
                        }
                    }
                }
            }
            Tensor::new(&shape.dims(), data).expect("latent dims")
        })
        .collect()
}

/// One training video: target plus global noise plus sparse patch defects.
pub fn real_video(target: &Tensor, grid: &GridSpec, cfg: &WorldConfig, rng: &mut SeededRng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&cfg.defect_prob) || cfg.noise_std < 0.0 || cfg.defect_scale < 0.0 {
        return invalid("world config out of range");
    }
    let mut v = target.clone();
    for x in v.data_mut() {
        *x += cfg.noise_std * rng.normal();
    }
    for idx in grid.indices().collect::<Vec<_>>() {
        if rng.uniform() < cfg.defect_prob {
            let shift = cfg.defect_scale * rng.normal();
            let ids = grid.patch_indices(target.dims(), idx)?;
            let data = v.data_mut();
            for k in ids {
                data[k] += shift;
            }
        }
    }
    Ok(v)
}

/// A video for reward annotation: like [`real_video`] but with the noise
/// level itself drawn from 0.4 to 1.6 times the configured one, so the
/// annotated set spans a wide range of quality.
pub fn annotation_video(target: &Tensor, grid: &GridSpec, cfg: &WorldConfig, rng: &mut SeededRng) -> Result<Tensor> {
    let noise_std = cfg.noise_std * (0.4 + 1.2 * rng.uniform());
    real_video(target, grid, &WorldConfig { noise_std, ..*cfg }, rng)
}

pub const SUBJECTS: [&str; 8] = ["dog", "sailboat", "city street", "waterfall", "guitarist", "hot air balloon", "panda", "train"];
const ACTIONS: [&str; 8] = [
    "moving slowly",
    "seen at sunset",
    "in heavy rain",
    "under a clear sky",
    "filmed from above",
    "in slow motion",
    "with a shallow depth of field",
    "captured on a foggy morning",
];
const STYLES: [&str; 6] = ["", "cinematic, ", "watercolor style, ", "high detail, ", "vintage film, ", "aerial shot, "];

/// Templated prompt for `class`; the subject word is what ties text to class.
pub fn prompt_text(class: usize, rng: &mut SeededRng) -> String {
    let subject = SUBJECTS[class % SUBJECTS.len()];
    let action = ACTIONS[rng.below(ACTIONS.len() as u64) as usize];
    let style = STYLES[rng.below(STYLES.len() as u64) as usize];
    format!("{style}a {subject} {action}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_distinct_and_deterministic() {
        let shape = LatentShape::default();
        let a = make_targets(shape, 4, &SeededRng::new(3));
        let b = make_targets(shape, 4, &SeededRng::new(3));
        assert_eq!(a, b);
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(a[i].mean_sq_dist(&a[j]).unwrap() > 0.05);
            }
        }
    }

    #[test]
    fn real_videos_vary() {
        let shape = LatentShape::default();
        let grid = GridSpec::new(12, 12, 3, 3).unwrap();
        let t = &make_targets(shape, 1, &SeededRng::new(1))[0];
        let mut rng = SeededRng::new(2);
        let v1 = real_video(t, &grid, &WorldConfig::default(), &mut rng).unwrap();
        let v2 = real_video(t, &grid, &WorldConfig::default(), &mut rng).unwrap();
        assert_ne!(v1, v2);
        assert!(v1.mean_sq_dist(t).unwrap() > 0.0);
    }
}
