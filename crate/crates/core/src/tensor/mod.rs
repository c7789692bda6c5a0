//! Dense row-major tensors and the handful of kernels the preprocessing
//! layers and the benchmark network are built from.

mod ops;

pub use ops::{
    conv1d_valid, conv1d_valid_into, conv2d_strided, log10_clamped, matmul, normalize_with_stats,
    reduce_stats, relu, scale_add,
};

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type code used by the tensor file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real scalar a [`Tensor`] can hold.
///
/// `f32` is the working precision; `f64` exists so reference computations
/// in tests can run at full precision through the same code paths.
pub trait Scalar: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must hold exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

pub const MAX_RANK: usize = 4;

/// Ordered list of dimension sizes, each at least 1, rank 1 to 4.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::domain(format!(
                "tensor rank must be 1..={MAX_RANK}, got {}",
                dims.len()
            )));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::domain(format!("dimension {axis} has size 0")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::domain("shape element count overflows"))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Dense N-dimensional array in row-major order.
///
/// Tensors are treated as values: operations return new tensors and never
/// mutate their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::domain(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at flat index {i}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Skips the finiteness scan; the caller guarantees `data.len()` matches.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor::from_parts(shape, vec![value; n]))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::one())
    }

    /// Fills the tensor from a function of the flat index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(&mut f).collect();
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    /// Number of elements. Never zero.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() {
            return Err(Error::domain(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.rank()
            )));
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(self.dims()).zip(self.shape.strides()) {
            if i >= d {
                return Err(Error::domain(format!("index {index:?} out of bounds for {}", self.shape)));
            }
            off += i * s;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let o = self.offset(index)?;
        self.data[o] = value;
        Ok(())
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::domain(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    /// Contiguous sub-tensor at position `i` of the leading axis.
    pub fn slice_outer(&self, i: usize) -> Result<Self> {
        let dims = self.dims();
        if i >= dims[0] {
            return Err(Error::domain(format!("outer index {i} out of bounds for {}", self.shape)));
        }
        let inner: Vec<usize> = if dims.len() == 1 { vec![1] } else { dims[1..].to_vec() };
        let n: usize = inner.iter().product();
        Ok(Tensor::from_parts(Shape(inner), self.data[i * n..(i + 1) * n].to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::domain("cannot stack zero tensors"))?;
        if parts.iter().any(|p| p.shape != first.shape) {
            return Err(Error::domain("stacked tensors must share a shape"));
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(first.dims());
        let shape = Shape::new(&dims)?;
        let mut data = Vec::with_capacity(shape.numel());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    /// Applies `f` pointwise. Shape is preserved.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::domain(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
