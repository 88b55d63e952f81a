//! Dense tensors and the layer kernels the codec transforms are built from.
//!
//! Every kernel accumulates each output element in a fixed order
//! (input channel, then kernel row, then kernel column), so results are
//! bit-identical between the sequential and the data-parallel paths and
//! across machines. Parallelism is only ever over output channels.

mod conv;
mod norm;
mod tensor;

pub use conv::{ConvWeights, Padding};
pub use norm::NormWeights;
pub use tensor::{psnr, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("data length {got} does not match shape (expected {expected})")]
    DataLength { expected: usize, got: usize },
    #[error("channel mismatch: layer expects {expected} input channels, tensor has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("layer produces a non-positive output dimension")]
    NonPositiveOutput,
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Supplies scratch and output buffers to the kernels.
///
/// Buffers handed out by `take` have exactly `len` elements; their contents
/// are unspecified and kernels overwrite every element they read back.
pub trait BufferSource: Sync {
    fn take(&self, len: usize) -> Vec<f32>;
    fn give(&self, buf: Vec<f32>);
}

/// Plain heap allocation, no reuse.
#[derive(Debug, Default, Clone, Copy)]
pub struct Heap;

impl BufferSource for Heap {
    fn take(&self, len: usize) -> Vec<f32> {
        vec![0.0; len]
    }

    fn give(&self, _buf: Vec<f32>) {}
}

/// How a kernel spreads work over output channels.
/// Defaults to `Parallel` when the `parallel` feature is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Runs `f(index, plane)` for every `plane_len` chunk of `out`.
pub(crate) fn for_each_plane<F>(exec: Exec, out: &mut [f32], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    if plane_len == 0 {
        return;
    }
    match exec {
        Exec::Sequential => out
            .chunks_mut(plane_len)
            .enumerate()
            .for_each(|(i, p)| f(i, p)),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(plane_len)
                .enumerate()
                .for_each(|(i, p)| f(i, p))
        }
    }
}

/// Kernel entry points bound to an execution mode and a buffer source.
#[derive(Clone, Copy)]
pub struct Kernels<'a> {
    pub exec: Exec,
    pub buffers: &'a dyn BufferSource,
}

impl Default for Kernels<'static> {
    fn default() -> Self {
        Kernels {
            exec: Exec::default(),
            buffers: &Heap,
        }
    }
}

impl<'a> Kernels<'a> {
    pub fn new(exec: Exec, buffers: &'a dyn BufferSource) -> Self {
        Kernels { exec, buffers }
    }

    pub fn conv2d(
        &self,
        input: &Tensor,
        w: &ConvWeights,
        padding: usize,
    ) -> Result<Tensor, NumericsError> {
        conv::conv2d(self, input, w, padding)
    }

    pub fn conv2d_transpose(
        &self,
        input: &Tensor,
        w: &ConvWeights,
        padding: Padding,
    ) -> Result<Tensor, NumericsError> {
        conv::conv2d_transpose(self, input, w, padding)
    }

    pub fn gdn(
        &self,
        input: &Tensor,
        nw: &NormWeights,
        inverse: bool,
    ) -> Result<Tensor, NumericsError> {
        norm::divisive_norm(self, input, nw, inverse, norm::Kind::Gdn)
    }

    pub fn onedn(
        &self,
        input: &Tensor,
        nw: &NormWeights,
        inverse: bool,
    ) -> Result<Tensor, NumericsError> {
        norm::divisive_norm(self, input, nw, inverse, norm::Kind::OneDn)
    }

    /// Returns a tensor's storage to the buffer source.
    pub fn recycle(&self, t: Tensor) {
        self.buffers.give(t.into_data());
    }
}

pub fn conv2d(input: &Tensor, w: &ConvWeights, padding: usize) -> Result<Tensor, NumericsError> {
    Kernels::default().conv2d(input, w, padding)
}

/// Transposed convolution with zero output padding.
pub fn conv2d_transpose(
    input: &Tensor,
    w: &ConvWeights,
    padding: usize,
) -> Result<Tensor, NumericsError> {
    Kernels::default().conv2d_transpose(input, w, Padding::symmetric(padding))
}

pub fn gdn(input: &Tensor, nw: &NormWeights, inverse: bool) -> Result<Tensor, NumericsError> {
    Kernels::default().gdn(input, nw, inverse)
}

pub fn onedn(input: &Tensor, nw: &NormWeights, inverse: bool) -> Result<Tensor, NumericsError> {
    Kernels::default().onedn(input, nw, inverse)
}

/// In-place `max(x, 0)`.
pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
