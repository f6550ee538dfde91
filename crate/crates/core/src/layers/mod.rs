//! The eight ported blocks with forward and backward passes, each expressed
//! as engine kernels. Every operation is also exposed as a free function so
//! the math can be exercised without a net around it.

pub mod conv;
pub mod ip;
pub mod pool;
pub mod relu;
pub mod softmax;

pub use conv::{col2im, conv_backward, conv_forward, im2col, ConvLayer};
pub use ip::{ip_backward, ip_forward, IpLayer};
pub use pool::{pool_backward, pool_forward, PoolLayer};
pub use relu::{relu_backward, relu_forward, ReluLayer};
pub use softmax::{
    accuracy, softmax_backward, softmax_forward, softmax_loss_backward, softmax_loss_forward,
    SoftmaxLayer, SoftmaxLossLayer,
};

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::{Shape, Tensor};

/// Per-batch side inputs a layer may need (class labels for loss/accuracy).
#[derive(Clone, Copy, Debug, Default)]
pub struct BatchCtx<'a> {
    pub labels: Option<&'a [usize]>,
}

/// One block in the chain. `setup` fixes shapes and allocates learnables;
/// `forward`/`backward` run on preallocated blobs. Layers that run in place
/// (relu) implement the `_in_place` entry points instead.
pub trait Layer {
    fn name(&self) -> &str;
    fn kind(&self) -> &'static str;

    fn setup(&mut self, bottom: &Shape, rng: &mut Pcg32) -> Result<()>;
    fn top_shape(&self, bottom: &Shape) -> Result<Shape>;

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        ctx: &BatchCtx<'_>,
    ) -> Result<()>;

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        ctx: &BatchCtx<'_>,
    ) -> Result<()>;

    fn supports_in_place(&self) -> bool {
        false
    }

    fn forward_in_place(
        &mut self,
        _eng: &Engine,
        _blob: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        Err(Error::InvalidInput(format!(
            "layer '{}' cannot run in place",
            self.name()
        )))
    }

    fn backward_in_place(
        &mut self,
        _eng: &Engine,
        _blob: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        Err(Error::InvalidInput(format!(
            "layer '{}' cannot run in place",
            self.name()
        )))
    }

    /// Learnable blobs in snapshot order (weights before bias).
    fn params_mut(&mut self) -> Vec<&mut Blob> {
        Vec::new()
    }

    fn params(&self) -> Vec<&Blob> {
        Vec::new()
    }

    /// Loss produced by the last forward pass, for loss layers.
    fn loss(&self) -> Option<f32> {
        None
    }
}

/// Spatial filter geometry shared by convolution and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub num_output: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub bias: bool,
}

impl ConvParams {
    pub fn square(num_output: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvParams {
            num_output,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_output == 0 {
            return Err(Error::InvalidShape("conv num_output must be >= 1".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::InvalidShape(
                "conv kernel and stride must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Floor output dims: (H + 2*pad - kernel) / stride + 1, each >= 1.
    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_extent(h, self.pad_h, self.kernel_h, self.stride_h)?;
        let ow = out_extent(w, self.pad_w, self.kernel_w, self.stride_w)?;
        Ok((oh, ow))
    }
}

pub(crate) fn out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::InvalidShape(format!(
            "window {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMethod {
    Max,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub method: PoolMethod,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl PoolParams {
    pub fn square(method: PoolMethod, kernel: usize, stride: usize, pad: usize) -> Self {
        PoolParams {
            method,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::InvalidShape(
                "pool kernel and stride must be >= 1".into(),
            ));
        }
        // pad < kernel guarantees every window sees at least one in-bounds
        // element, so the average divisor is never zero.
        if self.pad_h >= self.kernel_h || self.pad_w >= self.kernel_w {
            return Err(Error::InvalidShape(
                "pool pad must be smaller than the kernel".into(),
            ));
        }
        Ok(())
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_extent(h, self.pad_h, self.kernel_h, self.stride_h)?;
        let ow = out_extent(w, self.pad_w, self.kernel_w, self.stride_w)?;
        Ok((oh, ow))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IpParams {
    pub num_output: usize,
    pub bias: bool,
    /// Weight storage orientation: false stores [N, K], true stores [K, N].
    pub transpose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluParams {
    pub negative_slope: f32,
}

impl Default for ReluParams {
    fn default() -> Self {
        ReluParams {
            negative_slope: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccuracyParams {
    pub top_k: usize,
}

impl Default for AccuracyParams {
    fn default() -> Self {
        AccuracyParams { top_k: 1 }
    }
}

/// Xavier-uniform fill with limit sqrt(3 / fan_in).
pub(crate) fn xavier_fill(t: &mut Tensor, fan_in: usize, rng: &mut Pcg32) {
    let limit = (3.0f32 / fan_in as f32).sqrt();
    for v in t.data_mut() {
        *v = rng.uniform(-limit, limit);
    }
}
