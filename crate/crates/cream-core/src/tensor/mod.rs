//! Dense 4-D tensors and the forward/backward kernels the network is built
//! from: convolution, transposed convolution, 2x2 max-pooling, ReLU,
//! residual add and channel concatenation, plus a recording tape for
//! reverse-mode differentiation and a finite-difference gradient checker.

mod conv;
mod elem;
mod gradcheck;
mod matmul;
mod pool;
mod tape;

pub use conv::{conv2d, conv2d_backward, conv_output_dims, deconv2d, deconv2d_backward, ConvParams};
pub use elem::{add, add_backward, concat_channels, concat_channels_backward, relu, relu_backward, slice_channels};
pub use gradcheck::{grad_check_fn, CheckedInput, GradCheckReport};
pub use pool::{maxpool2x2, maxpool2x2_backward};
pub use tape::{Tape, ValueId};

use std::fmt;

use num_traits::Float;

/// Element type for tensor kernels. Training and inference run in `f32`;
/// gradient checking runs the same kernels in `f64`.
pub trait Scalar:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shape of a [`Tensor4`]: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Dims4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Errors produced by shape validation in the kernel layer.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ShapeError {
    #[error("{op}: shape mismatch: {lhs} vs {rhs}")]
    Mismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("{op}: input {input} with kernel {kh}x{kw}, stride {sh}x{sw}, padding {ph}x{pw} yields no valid output positions")]
    BadOutputSize {
        op: &'static str,
        input: Dims4,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        ph: usize,
        pw: usize,
    },
    #[error("{op}: spatial dims of {input} must be even")]
    OddSpatial { op: &'static str, input: Dims4 },
    #[error("tensor data length {len} does not match dims {dims}")]
    DataLength { dims: Dims4, len: usize },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

/// Dense 4-D array in row-major (n, c, h, w) order with an optional
/// same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: Dims4,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(dims: Dims4, data: Vec<T>) -> Result<Self, ShapeError> {
        if data.len() != dims.len() {
            return Err(ShapeError::DataLength {
                dims,
                len: data.len(),
            });
        }
        Ok(Tensor4 {
            dims,
            data,
            grad: None,
        })
    }

    pub fn zeros(dims: Dims4) -> Self {
        Tensor4 {
            dims,
            data: vec![T::zero(); dims.len()],
            grad: None,
        }
    }

    pub fn full(dims: Dims4, value: T) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
            grad: None,
        }
    }

    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 {
            dims,
            data,
            grad: None,
        }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
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

    #[inline]
    pub fn index_of(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index_of(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index_of(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous view of one (n, c) plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims.h * self.dims.w;
        let start = (n * self.dims.c + c) * hw;
        &self.data[start..start + hw]
    }

    /// Contiguous view of one sample (all channels).
    pub fn sample(&self, n: usize) -> &[T] {
        let chw = self.dims.c * self.dims.h * self.dims.w;
        &self.data[n * chw..(n + 1) * chw]
    }

    /// Copy of one sample as a batch-1 tensor.
    pub fn sample_tensor(&self, n: usize) -> Tensor4<T> {
        let d = Dims4::new(1, self.dims.c, self.dims.h, self.dims.w);
        Tensor4 {
            dims: d,
            data: self.sample(n).to_vec(),
            grad: None,
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn ensure_grad(&mut self) -> &mut [T] {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.dims.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<(), ShapeError> {
        if grad.len() != self.dims.len() {
            return Err(ShapeError::DataLength {
                dims: self.dims,
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Element-wise cast; drops the gradient buffer.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.to_f64()))
                .collect(),
            grad: None,
        }
    }
}

pub(crate) fn require_same_dims<T: Scalar>(
    op: &'static str,
    a: &Tensor4<T>,
    b: &Tensor4<T>,
) -> Result<(), ShapeError> {
    if a.dims() != b.dims() {
        return Err(ShapeError::Mismatch {
            op,
            lhs: a.dims().to_string(),
            rhs: b.dims().to_string(),
        });
    }
    Ok(())
}
