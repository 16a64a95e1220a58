//! Flat parameter storage with a named block layout.

use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::error::{invalid, shape_err, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub dims: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Parameters of one model: a flat vector plus the blocks that partition it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<ParamBlock>,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<ParamBlock>,
    next: usize,
}

impl LayoutBuilder {
    pub fn block(mut self, name: &str, dims: &[usize]) -> Self {
        let block = ParamBlock { name: name.to_string(), offset: self.next, dims: dims.to_vec() };
        self.next += block.len();
        self.blocks.push(block);
        self
    }

    pub fn zeros(self) -> ParamVector {
        ParamVector { values: vec![0.0; self.next], blocks: self.blocks }
    }
}

impl ParamVector {
    pub fn layout() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    /// Rebuilds a vector from blocks, checking that they tile `values` exactly.
    pub fn from_parts(values: Vec<f64>, blocks: Vec<ParamBlock>) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.offset != next {
                return invalid(format!("block {} starts at {} not {next}", b.name, b.offset));
            }
            next += b.len();
        }
        if next != values.len() {
            return shape_err(format!("layout covers {next} of {} values", values.len()));
        }
        Ok(Self { values, blocks })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_tensor(&self, name: &str) -> Option<Tensor> {
        let b = self.block(name)?;
        Tensor::new(&b.dims, self.values[b.range()].to_vec()).ok()
    }

    /// Fills a block with `N(0, std^2)` draws.
    pub fn init_normal(&mut self, name: &str, std: f64, rng: &mut SeededRng) {
        let range = self.block(name).expect("known block").range();
        for v in &mut self.values[range] {
            *v = std * rng.normal();
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.blocks == other.blocks
    }

    /// Appends one tensor per block to `bundle`, in layout order.
    pub fn push_blocks(&self, bundle: &mut Bundle) {
        for b in &self.blocks {
            bundle.push(b.name.clone(), self.block_tensor(&b.name).expect("own block"));
        }
    }

    /// Copies every block of `self`'s layout out of `bundle`, checking shapes.
    pub fn fill_from(&mut self, bundle: &Bundle) -> Result<()> {
        for b in &self.blocks {
            let t = bundle.require(&b.name)?;
            if t.dims() != b.dims.as_slice() {
                return shape_err(format!("block {} has dims {:?}, want {:?}", b.name, t.dims(), b.dims));
            }
            self.values[b.range()].copy_from_slice(t.data());
        }
        Ok(())
    }
}
