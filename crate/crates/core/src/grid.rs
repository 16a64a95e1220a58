//! Spatial patch grid over latents.
//!
//! Rows `0..h_n-1` get height `floor(h / h_n)` and the last row takes the
//! remainder, `h - (h_n - 1) * floor(h / h_n)`; columns likewise. Frames are
//! never split. Patch `(0, 0)` is the upper-left cell.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchIndex {
    pub i: usize,
    pub j: usize,
}

impl PatchIndex {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
    pub row_offsets: Vec<usize>,
    pub row_sizes: Vec<usize>,
    pub col_offsets: Vec<usize>,
    pub col_sizes: Vec<usize>,
}

fn partition(extent: usize, parts: usize) -> (Vec<usize>, Vec<usize>) {
    let base = extent / parts;
    let mut sizes = vec![base; parts];
    sizes[parts - 1] = extent - (parts - 1) * base;
    let offsets = (0..parts).map(|k| k * base).collect();
    (offsets, sizes)
}

impl GridSpec {
    pub fn new(height: usize, width: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || height < rows || width < cols {
            return invalid(format!("cannot split {height}x{width} into a {rows}x{cols} grid"));
        }
        let (row_offsets, row_sizes) = partition(height, rows);
        let (col_offsets, col_sizes) = partition(width, cols);
        Ok(Self { rows, cols, height, width, row_offsets, row_sizes, col_offsets, col_sizes })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// All indices in row-major `(i, j)` order.
    pub fn indices(&self) -> impl Iterator<Item = PatchIndex> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| PatchIndex::new(i, j)))
    }

    pub fn flat(&self, idx: PatchIndex) -> usize {
        idx.i * self.cols + idx.j
    }

    pub fn check_index(&self, idx: PatchIndex) -> Result<()> {
        if idx.i >= self.rows || idx.j >= self.cols {
            return invalid(format!("patch ({}, {}) outside {}x{} grid", idx.i, idx.j, self.rows, self.cols));
        }
        Ok(())
    }

    /// Patch containing spatial position `(y, x)`.
    pub fn locate(&self, y: usize, x: usize) -> PatchIndex {
        let find = |offsets: &[usize], v: usize| offsets.iter().rposition(|&o| o <= v).expect("offset 0");
        PatchIndex::new(find(&self.row_offsets, y), find(&self.col_offsets, x))
    }

    fn check_latent(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != 4 || dims[1] != self.height || dims[2] != self.width {
            return shape_err(format!("latent {dims:?} does not match a {}x{} grid base", self.height, self.width));
        }
        Ok(())
    }

    pub fn patch_dims(&self, frames: usize, channels: usize, idx: PatchIndex) -> [usize; 4] {
        [frames, self.row_sizes[idx.i], self.col_sizes[idx.j], channels]
    }

    /// Flat row-major offsets of patch `idx` within a latent of `dims`.
    pub fn patch_indices(&self, dims: &[usize], idx: PatchIndex) -> Result<Vec<usize>> {
        self.check_latent(dims)?;
        self.check_index(idx)?;
        let (f, h, w, c) = (dims[0], dims[1], dims[2], dims[3]);
        let (r0, rs) = (self.row_offsets[idx.i], self.row_sizes[idx.i]);
        let (c0, cs) = (self.col_offsets[idx.j], self.col_sizes[idx.j]);
        let mut out = Vec::with_capacity(f * rs * cs * c);
        for fi in 0..f {
            for y in r0..r0 + rs {
                let base = ((fi * h + y) * w + c0) * c;
                out.extend(base..base + cs * c);
            }
        }
        Ok(out)
    }

    /// Copy of one patch of `x`.
    pub fn slice_like(&self, x: &Tensor, idx: PatchIndex) -> Result<Tensor> {
        let indices = self.patch_indices(x.dims(), idx)?;
        let src = x.data();
        Tensor::new(
            &self.patch_dims(x.dims()[0], x.dims()[3], idx),
            indices.into_iter().map(|k| src[k]).collect(),
        )
    }

    /// Every patch of `x` in row-major `(i, j)` order.
    pub fn split(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_latent(x.dims())?;
        self.indices().map(|idx| self.slice_like(x, idx)).collect()
    }

    /// Inverse of [`GridSpec::split`].
    pub fn reassemble(&self, patches: &[Tensor]) -> Result<Tensor> {
        if patches.len() != self.cells() {
            return shape_err(format!("expected {} patches, got {}", self.cells(), patches.len()));
        }
        let (f, c) = (patches[0].dims().first().copied().unwrap_or(0), patches[0].dims().last().copied().unwrap_or(0));
        let dims = [f, self.height, self.width, c];
        let mut out = Tensor::zeros(&dims);
        for (idx, patch) in self.indices().zip(patches) {
            if patch.dims() != self.patch_dims(f, c, idx) {
                return shape_err(format!("patch ({}, {}) has shape {:?}", idx.i, idx.j, patch.dims()));
            }
            let indices = self.patch_indices(&dims, idx)?;
            let dst = out.data_mut();
            for (k, v) in indices.into_iter().zip(patch.data()) {
                dst[k] = *v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn sizes_follow_floor_remainder_rule() {
        let g = GridSpec::new(12, 12, 3, 3).unwrap();
        assert_eq!(g.row_sizes, vec![4, 4, 4]);
        assert_eq!(g.col_sizes, vec![4, 4, 4]);
        let g = GridSpec::new(13, 14, 3, 3).unwrap();
        assert_eq!(g.row_sizes, vec![4, 4, 5]);
        assert_eq!(g.col_sizes, vec![4, 4, 6]);
        let g = GridSpec::new(3, 3, 3, 3).unwrap();
        assert_eq!(g.row_sizes, vec![1, 1, 1]);
        assert!(GridSpec::new(2, 3, 3, 3).is_err());
        assert!(GridSpec::new(3, 3, 0, 3).is_err());
    }

    #[test]
    fn constant_and_identity_grid() {
        let g = GridSpec::new(13, 14, 3, 3).unwrap();
        let x = Tensor::filled(&[2, 13, 14, 1], 0.75);
        for p in g.split(&x).unwrap() {
            assert!(p.data().iter().all(|&v| v == 0.75));
        }
        let one = GridSpec::new(5, 6, 1, 1).unwrap();
        let mut rng = SeededRng::new(1);
        let y = Tensor::new(&[2, 5, 6, 2], rng.normal_vec(120)).unwrap();
        let parts = one.split(&y).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], y);
        assert_eq!(one.reassemble(&parts).unwrap(), y);
    }

    #[test]
    fn indicator_lands_in_predicted_patch() {
        let g = GridSpec::new(13, 14, 3, 3).unwrap();
        for y in 0..13 {
            for x in 0..14 {
                let mut t = Tensor::zeros(&[1, 13, 14, 1]);
                t.data_mut()[y * 14 + x] = 1.0;
                // offset-arithmetic oracle
                let i = (0..3).rev().find(|&i| y >= i * (13 / 3)).unwrap();
                let j = (0..3).rev().find(|&j| x >= j * (14 / 3)).unwrap();
                for idx in g.indices() {
                    let s: f64 = g.slice_like(&t, idx).unwrap().data().iter().sum();
                    assert_eq!(s, if idx == PatchIndex::new(i, j) { 1.0 } else { 0.0 });
                }
                assert_eq!(g.locate(y, x), PatchIndex::new(i, j));
            }
        }
    }

    #[test]
    fn errors() {
        let g = GridSpec::new(12, 12, 3, 3).unwrap();
        assert!(g.split(&Tensor::zeros(&[1, 12, 13, 1])).is_err());
        assert!(g.slice_like(&Tensor::zeros(&[1, 12, 12, 1]), PatchIndex::new(3, 0)).is_err());
        let parts = g.split(&Tensor::zeros(&[1, 12, 12, 1])).unwrap();
        assert!(g.reassemble(&parts[..8]).is_err());
        let mut bad = parts.clone();
        bad[8] = Tensor::zeros(&[1, 4, 5, 1]);
        assert!(g.reassemble(&bad).is_err());
    }

    proptest! {
        #[test]
        fn split_reassemble_identity(h in 1usize..20, w in 1usize..20, rn in 1usize..5, cn in 1usize..5,
                                     f in 1usize..3, c in 1usize..3, seed in any::<u64>()) {
            prop_assume!(h >= rn && w >= cn);
            let g = GridSpec::new(h, w, rn, cn).unwrap();
            prop_assert_eq!(g.row_sizes.iter().sum::<usize>(), h);
            prop_assert_eq!(g.col_sizes.iter().sum::<usize>(), w);
            let mut rng = SeededRng::new(seed);
            let x = Tensor::new(&[f, h, w, c], rng.normal_vec(f * h * w * c)).unwrap();
            let back = g.reassemble(&g.split(&x).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
