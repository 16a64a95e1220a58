//! Small learned patch reward model distilled from per-patch labels.
//!
//! Input features for patch `(i, j)` of a video: the patch values
//! zero-padded to the largest patch size, a one-hot of the patch index, a
//! one-hot of the prompt class, and the whole video average-pooled onto the
//! grid (one mean per cell) so every patch is scored in context.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::stats::spearman;
use crate::bundle::Bundle;
use crate::diffusion::LatentShape;
use crate::error::{invalid, shape_err, HaloError, Result};
use crate::grid::{GridSpec, PatchIndex};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamVector;
use crate::rng::SeededRng;
use crate::tape::{Linear, Tape};
use crate::tensor::Tensor;

use super::vector::{regression_loss, PatchRewardGrid, RewardVector, DIMENSIONS, SCORE_MAX, SCORE_MIN};
use super::RewardModel;

const KIND: &str = "patch_regressor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorArch {
    pub latent: LatentShape,
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub hidden: usize,
}

impl RegressorArch {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.latent.height, self.latent.width, self.rows, self.cols)
    }

    fn max_patch(&self) -> Result<(usize, usize)> {
        let g = self.grid()?;
        Ok((*g.row_sizes.iter().max().expect("rows"), *g.col_sizes.iter().max().expect("cols")))
    }

    pub fn input_dim(&self) -> Result<usize> {
        let (mr, mc) = self.max_patch()?;
        let cells = self.rows * self.cols;
        Ok(self.latent.frames * mr * mc * self.latent.channels + cells + self.classes + cells)
    }

    pub fn layout(&self) -> Result<ParamVector> {
        let inp = self.input_dim()?;
        Ok(ParamVector::layout()
            .block("h.w", &[self.hidden, inp])
            .block("h.b", &[self.hidden])
            .block("o.w", &[DIMENSIONS, self.hidden])
            .block("o.b", &[DIMENSIONS])
            .zeros())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRegressor {
    pub arch: RegressorArch,
    pub params: ParamVector,
}

/// One distillation example: a video with teacher labels for every patch.
#[derive(Debug, Clone)]
pub struct LabeledVideo {
    pub class: usize,
    pub video: Tensor,
    pub labels: PatchRewardGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate reached in the last epoch under cosine annealing.
    pub final_lr: f64,
    pub batch: usize,
    pub holdout_fraction: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 60, lr: 1e-2, final_lr: 1e-5, batch: 32, holdout_fraction: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct DistillReport {
    pub regressor: PatchRegressor,
    /// Full training-set regression loss after each epoch; an epoch that
    /// would raise it is rolled back, so the sequence never increases.
    pub epoch_losses: Vec<f64>,
    pub heldout_loss: f64,
    /// Rank correlation of scalarized held-out predictions with the labels.
    pub heldout_spearman: f64,
    pub train_videos: usize,
    pub heldout_videos: usize,
}

impl PatchRegressor {
    pub fn init(arch: RegressorArch, rng: &mut SeededRng) -> Result<Self> {
        if arch.hidden == 0 || arch.classes == 0 {
            return invalid("regressor extents must be positive");
        }
        let mut params = arch.layout()?;
        params.init_normal("h.w", 1.0 / (arch.input_dim()? as f64).sqrt(), rng);
        let ob = params.block("o.b").expect("layout").range();
        for v in &mut params.values_mut()[ob] {
            *v = 0.5 * (SCORE_MIN + SCORE_MAX);
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: RegressorArch, params: ParamVector) -> Result<Self> {
        if !params.same_layout(&arch.layout()?) {
            return shape_err("regressor parameter layout mismatch");
        }
        Ok(Self { arch, params })
    }

    /// Bundle with header `{kind, arch, provenance}` and one tensor per block.
    pub fn to_bundle(&self, provenance: Value) -> Result<Bundle> {
        let header = serde_json::json!({ "kind": KIND, "arch": self.arch, "provenance": provenance });
        let mut b = Bundle::new(header);
        self.params.push_blocks(&mut b);
        Ok(b)
    }

    /// Inverse of [`PatchRegressor::to_bundle`]; also returns the provenance.
    pub fn from_bundle(b: &Bundle) -> Result<(Self, Value)> {
        if b.header.get("kind").and_then(Value::as_str) != Some(KIND) {
            return Err(HaloError::Format(format!("expected a {KIND} bundle")));
        }
        let arch: RegressorArch = serde_json::from_value(b.header["arch"].clone())?;
        let mut params = arch.layout()?;
        params.fill_from(b)?;
        Ok((Self::from_params(arch, params)?, b.header["provenance"].clone()))
    }

    /// Feature vectors for every patch of `video`, row-major.
    pub fn features(&self, class: usize, video: &Tensor) -> Result<Vec<Tensor>> {
        let a = &self.arch;
        a.latent.check(video)?;
        if class >= a.classes {
            return Err(HaloError::UnknownClass(class));
        }
        let grid = a.grid()?;
        let (mr, mc) = a.max_patch()?;
        let (f, c) = (a.latent.frames, a.latent.channels);
        let cells = grid.cells();
        let patches = grid.split(video)?;
        let pooled: Vec<f64> = patches.iter().map(|p| p.mean()).collect();
        let dim = a.input_dim()?;
        grid.indices()
            .zip(&patches)
            .map(|(idx, patch)| {
                let mut x = vec![0.0; dim];
                let (rs, cs) = (grid.row_sizes[idx.i], grid.col_sizes[idx.j]);
                let pd = patch.data();
                for fi in 0..f {
                    for y in 0..rs {
                        for xx in 0..cs {
                            for ch in 0..c {
                                x[((fi * mr + y) * mc + xx) * c + ch] = pd[((fi * rs + y) * cs + xx) * c + ch];
                            }
                        }
                    }
                }
                let mut off = f * mr * mc * c;
                x[off + grid.flat(idx)] = 1.0;
                off += cells;
                x[off + class] = 1.0;
                off += a.classes;
                x[off..off + cells].copy_from_slice(&pooled);
                Tensor::new(&[dim], x)
            })
            .collect()
    }

    fn layers(&self) -> (Linear, Linear) {
        (
            Linear::from_blocks(&self.params, "h.w", "h.b").expect("layout"),
            Linear::from_blocks(&self.params, "o.w", "o.b").expect("layout"),
        )
    }

    fn raw_on_tape(&self, tape: &mut Tape, feature: &Tensor) -> Result<crate::tape::NodeId> {
        let (hidden, out) = self.layers();
        let x = tape.input(feature.clone());
        let h = tape.affine(x, hidden)?;
        let h = tape.swish(h);
        tape.affine(h, out)
    }

    /// Clamped five-dimension predictions for every patch.
    pub fn predict(&self, class: usize, video: &Tensor) -> Result<PatchRewardGrid> {
        let feats = self.features(class, video)?;
        let mut tape = Tape::new(&self.params);
        let mut cells = Vec::with_capacity(feats.len());
        for f in &feats {
            let out = self.raw_on_tape(&mut tape, f)?;
            let v = tape.value(out).data();
            let mut s = [0.0; DIMENSIONS];
            for (d, x) in s.iter_mut().zip(v) {
                if !x.is_finite() {
                    return Err(HaloError::NonFinite("patch regressor output".into()));
                }
                *d = x.clamp(SCORE_MIN, SCORE_MAX);
            }
            cells.push(RewardVector::from_array(s)?);
        }
        PatchRewardGrid::new(self.arch.rows, self.arch.cols, cells)
    }

    pub fn score_patch(&self, class: usize, video: &Tensor, idx: PatchIndex) -> Result<RewardVector> {
        let grid = self.predict(class, video)?;
        Ok(*grid.get(idx.i, idx.j))
    }
}

impl RewardModel for PatchRegressor {
    fn score_video(&self, _class: usize, _video: &Tensor) -> Result<RewardVector> {
        invalid("the patch regressor only scores patches")
    }

    fn score_patches(&self, class: usize, video: &Tensor, grid: &GridSpec) -> Result<PatchRewardGrid> {
        if grid.rows != self.arch.rows || grid.cols != self.arch.cols || grid.height != self.arch.latent.height {
            return shape_err("grid does not match the regressor");
        }
        self.predict(class, video)
    }
}

fn mean_loss(model: &PatchRegressor, data: &[&LabeledVideo]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += regression_loss(&model.predict(ex.class, &ex.video)?, &ex.labels)?;
    }
    Ok(total / data.len() as f64)
}

/// Fits a [`PatchRegressor`] to the labels by minimising the mean squared
/// score error, holding out a fraction of whole videos for evaluation.
pub fn distill_patch_rm(
    dataset: &[LabeledVideo],
    latent: LatentShape,
    grid: &GridSpec,
    classes: usize,
    cfg: &DistillConfig,
    rng: &SeededRng,
) -> Result<DistillReport> {
    if dataset.is_empty() {
        return Err(HaloError::EmptyDataset("no labelled videos to distill from".into()));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) || cfg.batch == 0 {
        return invalid("holdout fraction must be in [0, 1) and batch positive");
    }
    let arch = RegressorArch { latent, rows: grid.rows, cols: grid.cols, classes, hidden: cfg.hidden };
    let mut model = PatchRegressor::init(arch, &mut rng.derive("init"))?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.derive("split").shuffle(&mut order);
    let n_hold = ((dataset.len() as f64) * cfg.holdout_fraction).round() as usize;
    let n_hold = n_hold.min(dataset.len().saturating_sub(1));
    let (hold_ids, train_ids) = order.split_at(n_hold);
    let train: Vec<&LabeledVideo> = train_ids.iter().map(|&i| &dataset[i]).collect();
    let hold: Vec<&LabeledVideo> = hold_ids.iter().map(|&i| &dataset[i]).collect();

    // (feature, label vector) per training patch
    let mut examples: Vec<(Tensor, [f64; DIMENSIONS])> = Vec::new();
    for ex in &train {
        if ex.labels.rows != grid.rows || ex.labels.cols != grid.cols {
            return shape_err("label grid does not match the configured grid");
        }
        for (feat, label) in model.features(ex.class, &ex.video)?.into_iter().zip(&ex.labels.cells) {
            examples.push((feat, label.to_array()));
        }
    }

    let mut opt = Adam::new(model.params.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut shuffle_rng = rng.derive("epochs");
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut accepted = mean_loss(&model, &train)?;
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / (cfg.epochs.max(2) - 1) as f64;
        let lr = cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos());
        let snapshot = (model.params.clone(), opt.clone());
        shuffle_rng.shuffle(&mut idx);
        for chunk in idx.chunks(cfg.batch) {
            let grad = {
                let mut tape = Tape::new(&model.params);
                let mut terms = Vec::with_capacity(chunk.len());
                for &k in chunk {
                    let (feat, label) = &examples[k];
                    let out = model.raw_on_tape(&mut tape, feat)?;
                    let target = tape.input(Tensor::new(&[DIMENSIONS], label.to_vec())?);
                    let diff = tape.sub(out, target)?;
                    terms.push(tape.sq_norm(diff));
                }
                let total = tape.sum(&terms)?;
                let loss = tape.scale(total, 1.0 / (chunk.len() * DIMENSIONS) as f64);
                tape.backward(loss)?
            };
            opt.step_with_lr(model.params.values_mut(), &grad, lr)?;
        }
        // An epoch that raises the training loss is undone.
        let loss = mean_loss(&model, &train)?;
        if loss > accepted {
            (model.params, opt) = snapshot;
        } else {
            accepted = loss;
        }
        epoch_losses.push(accepted);
    }

    let (heldout_loss, heldout_spearman) = if hold.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for ex in &hold {
            preds.extend(model.predict(ex.class, &ex.video)?.scalarized());
            labels.extend(ex.labels.scalarized());
        }
        let rho = spearman(&preds, &labels).unwrap_or(f64::NAN);
        (mean_loss(&model, &hold)?, rho)
    };

    Ok(DistillReport {
        regressor: model,
        epoch_losses,
        heldout_loss,
        heldout_spearman,
        train_videos: train.len(),
        heldout_videos: hold.len(),
    })
}
