//! Dense row-major matrix of `f32` values.
//!
//! Representation sets are plain rectangular arrays of single-precision
//! floats, often large (hundreds of thousands of rows), so the storage is a
//! single flat `Vec<f32>` with row views handed out as slices. All distance
//! arithmetic downstream accumulates in `f64`; `f32` is only the at-rest
//! element type.

use crate::error::{Error, Result};

/// Row-major `rows x dims` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    dims: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Wrap an existing buffer. `data.len()` must equal `rows * dims` and
    /// `dims` must be positive.
    pub fn new(rows: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("matrix dims must be > 0".into()));
        }
        let expected = rows
            .checked_mul(dims)
            .ok_or_else(|| Error::InvalidArgument("matrix size overflows usize".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "matrix buffer has {} elements, expected {rows} x {dims} = {expected}",
                data.len()
            )));
        }
        Ok(Matrix { rows, dims, data })
    }

    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, dims: usize) -> Result<Self> {
        Matrix::new(rows, dims, vec![0.0; rows * dims])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Borrow row `i` as a slice of length `dims`.
    ///
    /// Panics if `i >= rows`; row indices are internal bookkeeping and an
    /// out-of-range index is a bug, not a recoverable condition.
    pub fn row(&self, i: usize) -> &[f32] {
        let start = i * self.dims;
        &self.data[start..start + self.dims]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let start = i * self.dims;
        &mut self.data[start..start + self.dims]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Error if any element is NaN or infinite. `context` names the source
    /// (usually a file path) for the error message.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    row: i / self.dims,
                    col: i % self.dims,
                });
            }
        }
        Ok(())
    }

    /// Copy the given rows (in order) into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Result<Matrix> {
        let mut out = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            out.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.dims, out)
    }

    /// Stack two matrices with equal dims, `self` first.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix::new(self.rows + other.rows, self.dims, data)
    }
}
