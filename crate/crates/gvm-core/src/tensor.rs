//! Dense n-dimensional `f64` tensor.
//!
//! This is the storage type that crosses module boundaries and file
//! formats: video clips, feature maps, token grids (as their embedding
//! targets), checkpoint blocks. Differentiable computation happens on the
//! [`crate::tape::Tape`], which works on two-dimensional views; `Tensor`
//! carries data in and out.

use crate::error::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::BadShape { expected, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interpret as a matrix by folding all leading axes into rows.
    /// A vector of length n reads as [1, n]; a scalar as [1, 1].
    pub fn as_rows(&self) -> (usize, usize, &[f64]) {
        match self.shape.len() {
            0 => (1, 1, &self.data[..]),
            1 => (1, self.shape[0], &self.data[..]),
            _ => {
                let cols = *self.shape.last().unwrap();
                let rows = self.data.len() / cols.max(1);
                (rows, cols, &self.data[..])
            }
        }
    }

    /// Contiguous slice holding one index of the leading axis.
    pub fn index_axis0(&self, i: usize) -> Result<&[f64]> {
        let n = *self.shape.first().unwrap_or(&0);
        if i >= n {
            return Err(Error::IndexOutOfRange { what: "axis-0 index", index: i, bound: n });
        }
        let stride = self.data.len() / n;
        Ok(&self.data[i * stride..(i + 1) * stride])
    }
}
