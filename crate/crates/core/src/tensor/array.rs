//! Dense row-major f64 arrays, the carrier for every kernel input, output,
//! parameter, and gradient in the crate.

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NumericArray {
    /// Array filled with zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        NumericArray { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// Build from raw data; the element count must match the shape product.
    /// Debug builds additionally reject non-finite entries.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "NumericArray::from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, expect, data.len()),
            ));
        }
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite entry in NumericArray");
        Ok(NumericArray { shape: shape.to_vec(), data })
    }

    // Internal constructor for kernel outputs. Skips the finiteness debug
    // check so divergence can be detected at the loss, not by a panic.
    pub(crate) fn from_vec_unchecked(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NumericArray { shape: shape.to_vec(), data }
    }

    /// 1-D array borrowing semantics: `vector(&[1.0, 2.0])`.
    pub fn vector(values: &[f64]) -> Self {
        NumericArray { shape: vec![values.len()], data: values.to_vec() }
    }

    /// 2-D array from nested rows; all rows must share one length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("NumericArray::matrix", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        NumericArray::from_vec(&[r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Reinterpret as a new shape with the same element count.
    pub fn reshaped(self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::shape(
                "NumericArray::reshaped",
                format!("cannot view {} elements as {:?}", self.data.len(), shape),
            ));
        }
        Ok(NumericArray { shape: shape.to_vec(), data: self.data })
    }

    /// Number of rows of a 2-D array.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Number of columns of a 2-D array.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Contiguous row `r` of a 2-D array.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &NumericArray) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "NumericArray::add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Element-wise `self *= factor`.
    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }
}

/// Gradients produced by a layer's backward pass: one array for the input
/// and zero or more for the layer's parameters, each shaped exactly like the
/// value it differentiates.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub grad_input: NumericArray,
    pub grad_params: Vec<NumericArray>,
}

/// Dot product with a fixed four-lane accumulation order. Deterministic for
/// a given length, and within ~len·eps of strict left-to-right summation.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (qa, qb) in (&mut ca).zip(&mut cb) {
        lanes[0] += qa[0] * qb[0];
        lanes[1] += qa[1] * qb[1];
        lanes[2] += qa[2] * qb[2];
        lanes[3] += qa[3] * qb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `y += alpha * x`, element-wise.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
