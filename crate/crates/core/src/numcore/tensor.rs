//! Dense row-major `f64` tensors and the handful of kernels the networks need.

use serde::{Deserialize, Serialize};

use super::NumError;

/// Dense row-major array of 64-bit floats.
///
/// Construction from external data rejects NaN/Inf; the kernels below never
/// re-check finiteness, so callers that feed intermediate results (e.g. a
/// diverging chain) must check with [`Tensor::is_finite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating the shape and that every element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::LengthMismatch { shape, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Builds a `[rows, cols]` matrix from row slices.
    pub fn from_rows(rows: &[[f64; 2]]) -> Result<Self, NumError> {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), 2], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        Self::new(vec![rows, cols], data)
    }

    /// Internal constructor for kernel outputs; shape/length agreement is
    /// guaranteed by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent when viewed as a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub(crate) fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// `self += alpha * other`, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor, NumError> {
        Tensor::new(shape, self.data)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    /// Stacks the rows of `self` on top of the rows of `other`.
    pub fn vstack(&self, other: &Tensor) -> Result<Tensor, NumError> {
        if self.cols() != other.cols() {
            return Err(NumError::ShapeMismatch {
                op: "vstack",
                node: None,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        let mut shape = self.shape.clone();
        shape[0] += other.rows();
        Ok(Tensor::from_parts(shape, data))
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::from_parts(shape, self.data[start * c..end * c].to_vec())
    }
}

/// `a[n,k] · b[k,m]`.
///
/// Each output row depends only on the matching input row, and the
/// accumulation order is fixed, so results are bit-identical regardless of
/// how rows are batched together.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// `aᵀ · b` for `a[n,k]`, `b[n,m]`, producing `[k,m]`.
pub(crate) fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let m = b.cols();
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_parts(vec![k, m], out)
}

/// `a · bᵀ` for `a[n,m]`, `b[k,m]`, producing `[n,k]`.
pub(crate) fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    matmul(a, &b.transpose())
}

/// Adds a `[1,m]` row vector to every row of `a[n,m]`.
pub(crate) fn add_row(a: &Tensor, row: &Tensor) -> Tensor {
    let m = a.cols();
    let mut out = a.data.clone();
    for chunk in out.chunks_mut(m) {
        for (o, &r) in chunk.iter_mut().zip(&row.data) {
            *o += r;
        }
    }
    Tensor::from_parts(a.shape.clone(), out)
}

/// Column sums of `a[n,m]` as a `[1,m]` row.
pub(crate) fn sum_rows(a: &Tensor) -> Tensor {
    let m = a.cols();
    let mut out = vec![0.0; m];
    for chunk in a.data.chunks(m) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![1, m], out)
}
