//! Dense integer tensors in row-major order.
//!
//! Feature maps use `(rows, cols, channels)` layout; vectors are one-dimensional.

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<i32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<i32>) -> Result<Self, ShapeError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0; n],
        }
    }

    /// Feature map of shape `(rows, cols, channels)`.
    pub fn fmap(shape: FmapShape, data: Vec<i32>) -> Result<Self, ShapeError> {
        Self::new(vec![shape.rows, shape.cols, shape.channels], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as a feature map. Vectors are treated as `1×1×n`.
    pub fn fmap_shape(&self) -> FmapShape {
        match self.dims.as_slice() {
            [r, c, ch] => FmapShape::new(*r, *c, *ch),
            [n] => FmapShape::new(1, 1, *n),
            _ => FmapShape::new(1, 1, self.data.len()),
        }
    }

    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self, ShapeError> {
        let expected: usize = dims.iter().product();
        if expected != self.data.len() {
            return Err(ShapeError::DataLength {
                dims,
                len: self.data.len(),
            });
        }
        self.dims = dims;
        Ok(self)
    }

    /// True when every element is representable as a signed `bits`-bit integer.
    pub fn fits_bits(&self, bits: u32) -> bool {
        let (lo, hi) = signed_range(bits);
        self.data.iter().all(|&v| (lo..=hi).contains(&(v as i64)))
    }
}

/// Shape of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FmapShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl FmapShape {
    pub const fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
        }
    }

    pub fn elements(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.cols + col) * self.channels + ch
    }
}

impl std::fmt::Display for FmapShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.channels)
    }
}

/// Inclusive range of a signed two's-complement integer of `bits` width.
pub fn signed_range(bits: u32) -> (i64, i64) {
    let hi = (1i64 << (bits - 1)) - 1;
    (-hi - 1, hi)
}

/// Clamps `v` into the signed `bits`-bit range.
#[inline]
pub fn saturate(v: i64, bits: u32) -> i32 {
    let (lo, hi) = signed_range(bits);
    v.clamp(lo, hi) as i32
}
