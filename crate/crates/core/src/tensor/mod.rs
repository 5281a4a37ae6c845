//! Dense f32 tensors and the handful of operators the segmentation networks
//! need, plus a recording tape with a freeze boundary and an Adam optimizer.
//!
//! Layout is row-major `N×C×H×W` for activations and `O×I×Kh×Kw` for
//! convolution kernels.

mod adam;
mod ops;
mod tape;

pub use adam::{adam_step, AdamState, LayerParams};
pub use ops::{
    concat_channels, conv2d, conv2d_backward, relu, relu_backward, softmax_backward,
    softmax_channels, upsample2x, upsample2x_backward, ConvGrads,
};
pub use tape::{Gradients, LayerGrad, Tape, Var, PROB_FLOOR};
pub(crate) use tape::weighted_nll_value;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("parameter/gradient mismatch: {0}")]
    ParamMismatch(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(TensorError::Shape(format!("rank {} not in 1..=4", dims.len())));
        }
        if dims.contains(&0) {
            return Err(TensorError::Shape(format!("zero extent in {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(TensorError::Shape(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        assert!(!dims.is_empty() && dims.len() <= 4 && dims.iter().all(|&d| d > 0));
        let len = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: f32) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Shape(format!("expected rank 4, got {:?}", self.dims))),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
