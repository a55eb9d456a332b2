//! Dense arrays and a small reverse-mode autodiff tape.
//!
//! Everything is generic over [`Scalar`] so the same kernels run in `f32`
//! for training and in `f64` for finite-difference gradient checks.
//! Convolutions are cross-correlations (no kernel flip) lowered to GEMM.

mod adam;
mod graph;
mod io;
pub mod kernels;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use io::{load_tensors, read_tensors, save_tensors, write_tensors};
pub use kernels::Padding;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index:?} out of range for shape {shape:?}")]
    Index { index: Vec<usize>, shape: Vec<usize> },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    /// `c = a·b + beta * c` with explicit row/column strides; `c` is row-major `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar_math {
    ($t:ty) => {
        const ZERO: Self = 0.0;
        const ONE: Self = 1.0;
        fn from_f64(v: f64) -> Self {
            v as $t
        }
        fn to_f64(self) -> f64 {
            self as f64
        }
        fn exp(self) -> Self {
            <$t>::exp(self)
        }
        fn ln(self) -> Self {
            <$t>::ln(self)
        }
        fn sqrt(self) -> Self {
            <$t>::sqrt(self)
        }
        fn is_finite(self) -> bool {
            <$t>::is_finite(self)
        }
    };
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn dgemm_checked(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= span(m, k, rsa, csa));
    assert!(b.len() >= span(k, n, rsb, csb));
    // SAFETY: the asserts above bound every strided access inside the slices
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

impl Scalar for f64 {
    impl_scalar_math!(f64);

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        dgemm_checked(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
    }
}

impl Scalar for f32 {
    impl_scalar_math!(f32);

    /// Products and sums run in f64 and are rounded once, so a result is
    /// within half an f32 ulp of the exact dot product.
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        assert!(c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        assert!(a.len() >= span(m, k, rsa, csa));
        assert!(b.len() >= span(k, n, rsb, csb));
        let widen = |src: &[f32], rows: usize, cols: usize, rs: isize, cs: isize| -> Vec<f64> {
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for col in 0..cols {
                    out.push(src[(r as isize * rs + col as isize * cs) as usize] as f64);
                }
            }
            out
        };
        let a64 = widen(a, m, k, rsa, csa);
        let b64 = widen(b, k, n, rsb, csb);
        let mut c64: Vec<f64> = if beta == 0.0 {
            vec![0.0; m * n]
        } else {
            c[..m * n].iter().map(|&v| v as f64).collect()
        };
        dgemm_checked(m, k, n, &a64, k as isize, 1, &b64, n as isize, 1, beta as f64, &mut c64);
        for (dst, v) in c.iter_mut().zip(c64) {
            *dst = v as f32;
        }
    }
}

/// Row-major n-d array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(TensorError::Index {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index.iter().zip(&self.shape).fold(0, |acc, (i, d)| acc * d + i))
    }

    pub fn at(&self, index: &[usize]) -> Result<T, TensorError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    /// Convert element type, e.g. to run an `f32` model in `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
