//! Flat row-major tensor and the scalar trait the whole core is generic over.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point scalar the computation core works with.
///
/// `f32` and `f64` both qualify; the pipeline uses `f64` (crate-root alias)
/// so finite-difference checks stay tight.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough construction from an `f64` literal.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal does not fit scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense tensor: shape plus row-major data. `product(shape) == data.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dims must be positive, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![S::zero(); n])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(vec![1, 1], vec![v])
    }

    /// 2-D constructor, the common case throughout the graph.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<S>) -> Self {
        let n = data.len();
        Tensor::new(vec![1, n], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        assert!(self.is_matrix(), "rows() on non-matrix {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert!(self.is_matrix(), "cols() on non-matrix {:?}", self.shape);
        self.shape[1]
    }

    pub fn is_scalar_shape(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> S {
        assert!(self.is_scalar_shape(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(self.is_matrix());
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        debug_assert!(self.is_matrix());
        &mut self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Copy of rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<S> {
        assert!(self.is_matrix() && start < end && end <= self.rows());
        let c = self.cols();
        Tensor::matrix(end - start, c, self.data[start * c..end * c].to_vec())
    }

    /// Converts every element through `f64` (used by checkpoints).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|v| v.to_f64().expect("scalar convertible to f64"))
            .collect()
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Self {
        Tensor::new(
            shape,
            data.iter().map(|&v| S::from_f64_lit(v)).collect(),
        )
    }
}

/// `C = A @ B` for row-major matrices, the only hot loop in the core.
pub(crate) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![S::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aik * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub(crate) fn transpose<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at(i, j);
        }
    }
    Tensor::matrix(n, m, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i = Tensor::<f64>::eye(3);
        assert_eq!(matmul(&a, &i), a);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::matrix(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(transpose(&transpose(&a)), a);
    }

    #[test]
    #[should_panic]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0]);
    }
}
