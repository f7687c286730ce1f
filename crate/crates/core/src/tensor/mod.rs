//! Minimal dense 4-D tensor engine with reverse-mode gradients.
//!
//! Layout is always (batch, channel, time, freq), row-major with freq fastest.
//! The engine is generic over the element type so gradient checks can run the
//! identical code in f64 while training runs in f32.

mod checkpoint;
mod graph;
mod kernels;
mod pad;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{
    softmax_slots, BnSpec, ConvSpec, Graph, Mode, NodeId, OpDesc, ParamEntry, ParamId, ParamStore,
    PoolSpec, WeightedSumSpec,
};
pub use pad::{axis_same_padding, out_len, same_padding, Pad};

use std::fmt::{Debug, Display};

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch at {context}: expected {expected:?}, got {got:?}")]
    Shape { context: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Element type of the engine. The gemm hook routes to a type-appropriate
/// matrix multiply and the conversion helpers avoid sprinkling `as` casts.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// c[m x n] = alpha * a b + beta * c with c row-major contiguous and a, b
    /// addressed through explicit (row, col) element strides, so transposed
    /// views need no copies.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    /// Plain row-major contiguous product.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n);
        Self::gemm_strided(m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c);
    }
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: f32,
        a: &[f32], rsa: isize, csa: isize,
        b: &[f32], rsb: isize, csb: isize,
        beta: f32,
        c: &mut [f32],
    ) {
        assert!(c.len() >= m * n);
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_strided(
        m: usize, k: usize, n: usize,
        alpha: f64,
        a: &[f64], rsa: isize, csa: isize,
        b: &[f64], rsb: isize, csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        assert!(c.len() >= m * n);
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![S::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "data length matches shape");
        Tensor { shape, data }
    }

    pub fn full(shape: [usize; 4], value: S) -> Self {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, t: usize, f: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + t) * self.shape[3] + f
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize, f: usize) -> S {
        self.data[self.idx(b, c, t, f)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, f: usize, v: S) {
        let i = self.idx(b, c, t, f);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, v: S) {
        for x in &mut self.data {
            *x = v;
        }
    }

    pub fn map<F: Fn(S) -> S>(&self, f: F) -> Tensor<S> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor { shape: self.shape, data: self.data.iter().map(|x| x.as_f64()).collect() }
    }

    pub fn from_f64(t: &Tensor<f64>) -> Tensor<S> {
        Tensor { shape: t.shape, data: t.data.iter().map(|&x| S::of(x)).collect() }
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
