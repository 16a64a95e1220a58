//! Dense row-major double-precision tensors of rank at most four.

mod io;

pub use io::{read_halt, write_halt, HALT_DTYPE_F64, HALT_MAGIC};

use crate::error::{shape_err, HaloError, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return shape_err(format!("rank {} exceeds {MAX_RANK}", dims.len()));
        }
        if dims.contains(&0) {
            return shape_err(format!("zero extent in {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return shape_err(format!("dims {dims:?} need {n} values, got {}", data.len()));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n]).expect("valid dims")
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: Vec::new(), data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err(format!("{what}: {:?} vs {:?}", self.dims, other.dims))
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(HaloError::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        self.check_same_shape(other, "axpby")?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn sq_norm(&self) -> f64 {
        sq_norm(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_sq_dist(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "mean_sq_dist")?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.data.len() as f64)
    }
}

pub fn sq_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}
