//! 2-D convolution lowered to im2col + gemm. The original loop nests are
//! flattened to a single index per output element, so every engine
//! invocation owns exactly one write; whole batches go through one launch.

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layers::{xavier_fill, BatchCtx, ConvParams, Layer};
use crate::linalg::{batched_gemm_acc_bt, batched_gemm_shared_a};
use crate::rng::Pcg32;
use crate::tensor::{transpose_into, MatrixView, Shape, Tensor};

/// Lower one C x H x W image into a (C*kh*kw) x (oh*ow) column matrix.
/// Column t holds the patch for output position t, ordered (c, ky, kx);
/// padding taps contribute 0.
pub fn im2col(eng: &Engine, image: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let dims = image.shape().dims();
    if dims.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "im2col expects a C x H x W image, got {dims:?}"
        )));
    }
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let (oh, ow) = p.out_dims(h, w)?;
    let mut out = Tensor::zeros(&[c * p.kernel_h * p.kernel_w, oh * ow])?;
    im2col_batch_into(eng, image.data(), 1, c, h, w, p, oh, ow, out.data_mut());
    Ok(out)
}

/// im2col over `batch` consecutive images in one launch; `out` holds the
/// per-image column blocks back to back. Flat index decode:
/// (image, channel-kernel row, output position).
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_batch_into(
    eng: &Engine,
    src: &[f32],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    p: &ConvParams,
    oh: usize,
    ow: usize,
    out: &mut [f32],
) {
    let spatial = oh * ow;
    let kk = p.kernel_h * p.kernel_w;
    let block = c * kk * spatial;
    debug_assert_eq!(src.len(), batch * c * h * w);
    debug_assert_eq!(out.len(), batch * block);
    let (kernel_w, stride_h, stride_w) = (p.kernel_w, p.stride_h, p.stride_w);
    let (pad_h, pad_w) = (p.pad_h as isize, p.pad_w as isize);
    eng.fill(out, |i| {
        let img = i / block;
        let rem = i % block;
        let ck = rem / spatial;
        let sp = rem % spatial;
        let ch = ck / kk;
        let k_idx = ck % kk;
        let ky = k_idx / kernel_w;
        let kx = k_idx % kernel_w;
        let yo = sp / ow;
        let xo = sp % ow;
        let yi = (yo * stride_h + ky) as isize - pad_h;
        let xi = (xo * stride_w + kx) as isize - pad_w;
        if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
            0.0
        } else {
            src[((img * c + ch) * h + yi as usize) * w + xi as usize]
        }
    });
}

/// Adjoint of [`im2col`]: each input element gathers every column entry that
/// im2col copied from it; padding positions are dropped.
pub fn col2im(
    eng: &Engine,
    cols: &Tensor,
    p: &ConvParams,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor> {
    let (oh, ow) = p.out_dims(h, w)?;
    let expect = [c * p.kernel_h * p.kernel_w, oh * ow];
    if cols.shape().dims() != expect {
        return Err(Error::ShapeMismatch(format!(
            "col2im expects {expect:?}, got {:?}",
            cols.shape().dims()
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w])?;
    col2im_batch_into(eng, cols.data(), 1, c, h, w, p, oh, ow, out.data_mut());
    Ok(out)
}

/// Gather form over a whole batch: one invocation per input element sums its
/// own contributions, so overlapping windows never race.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_batch_into(
    eng: &Engine,
    cols: &[f32],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    p: &ConvParams,
    oh: usize,
    ow: usize,
    out: &mut [f32],
) {
    let spatial = oh * ow;
    let kk = p.kernel_h * p.kernel_w;
    let col_block = c * kk * spatial;
    let plane = h * w;
    debug_assert_eq!(cols.len(), batch * col_block);
    debug_assert_eq!(out.len(), batch * c * plane);
    let p = *p;
    eng.fill(out, |i| {
        let img = i / (c * plane);
        let rem = i % (c * plane);
        let ch = rem / plane;
        let pix = rem % plane;
        let y = pix / w;
        let x = pix % w;
        let col_img = &cols[img * col_block..(img + 1) * col_block];
        let mut acc = 0.0f32;
        for ky in 0..p.kernel_h {
            let ypad = y + p.pad_h;
            if ypad < ky {
                continue;
            }
            let ynum = ypad - ky;
            if ynum % p.stride_h != 0 {
                continue;
            }
            let yo = ynum / p.stride_h;
            if yo >= oh {
                continue;
            }
            for kx in 0..p.kernel_w {
                let xpad = x + p.pad_w;
                if xpad < kx {
                    continue;
                }
                let xnum = xpad - kx;
                if xnum % p.stride_w != 0 {
                    continue;
                }
                let xo = xnum / p.stride_w;
                if xo >= ow {
                    continue;
                }
                let row = (ch * p.kernel_h + ky) * p.kernel_w + kx;
                acc += col_img[row * spatial + yo * ow + xo];
            }
        }
        acc
    });
}

fn conv_shapes(
    bottom: &Blob,
    weights: &Blob,
    p: &ConvParams,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    p.validate()?;
    let bd = bottom.shape().dims();
    if bd.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv bottom must be N x C x H x W, got {bd:?}"
        )));
    }
    let (n, c, h, w) = (bd[0], bd[1], bd[2], bd[3]);
    let expect_w = [p.num_output, c, p.kernel_h, p.kernel_w];
    if weights.shape().dims() != expect_w {
        return Err(Error::ShapeMismatch(format!(
            "conv weights must be {expect_w:?}, got {:?}",
            weights.shape().dims()
        )));
    }
    let (oh, ow) = p.out_dims(h, w)?;
    Ok((n, c, h, w, oh, ow))
}

/// Reusable column buffers sized for one batch.
pub struct ConvScratch {
    col: Vec<f32>,
    col_grad: Vec<f32>,
}

impl ConvScratch {
    pub fn new(batch: usize, patch: usize, spatial: usize) -> Self {
        ConvScratch {
            col: vec![0.0; batch * patch * spatial],
            col_grad: vec![0.0; batch * patch * spatial],
        }
    }

    pub fn empty() -> Self {
        ConvScratch {
            col: Vec::new(),
            col_grad: Vec::new(),
        }
    }
}

/// Per image n: top(n) viewed F x (oh*ow) = W viewed F x (C*kh*kw) times
/// im2col(bottom(n)); then bias f added to row f.
pub fn conv_forward(
    eng: &Engine,
    bottom: &Blob,
    weights: &Blob,
    bias: Option<&Blob>,
    p: &ConvParams,
    top: &mut Blob,
) -> Result<()> {
    let (_, c, _, _, oh, ow) = conv_shapes(bottom, weights, p)?;
    let mut scratch = ConvScratch::new(
        bottom.shape().dim(0),
        c * p.kernel_h * p.kernel_w,
        oh * ow,
    );
    conv_forward_scratch(eng, bottom, weights, bias, p, top, &mut scratch)
}

pub fn conv_forward_scratch(
    eng: &Engine,
    bottom: &Blob,
    weights: &Blob,
    bias: Option<&Blob>,
    p: &ConvParams,
    top: &mut Blob,
    scratch: &mut ConvScratch,
) -> Result<()> {
    let (n, c, h, w, oh, ow) = conv_shapes(bottom, weights, p)?;
    let f = p.num_output;
    let patch = c * p.kernel_h * p.kernel_w;
    let spatial = oh * ow;
    if top.shape().dims() != [n, f, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "conv top must be [{n}, {f}, {oh}, {ow}], got {:?}",
            top.shape().dims()
        )));
    }
    let bias_data = if p.bias {
        let b = bias.ok_or_else(|| Error::InvalidInput("conv bias blob missing".into()))?;
        if b.count() != f {
            return Err(Error::ShapeMismatch(format!(
                "conv bias must have {f} elements, got {}",
                b.count()
            )));
        }
        Some(b.data().data())
    } else {
        None
    };
    scratch.col.resize(n * patch * spatial, 0.0);

    im2col_batch_into(
        eng,
        bottom.data().data(),
        n,
        c,
        h,
        w,
        p,
        oh,
        ow,
        &mut scratch.col,
    );
    let w_mat = weights.data_as_matrix(f, patch, false)?;
    batched_gemm_shared_a(
        eng,
        &w_mat,
        &scratch.col,
        top.data_mut().data_mut(),
        n,
        spatial,
        false,
        bias_data,
    )
}

/// Per image n with G = top.diff(n) viewed F x (oh*ow) and
/// col = im2col(bottom.data(n)):
/// weights.diff += G * col^T; bias.diff[f] += sum of row f of G;
/// bottom.diff(n) = col2im(W^T * G).
pub fn conv_backward(
    eng: &Engine,
    bottom: &mut Blob,
    weights: &mut Blob,
    bias: Option<&mut Blob>,
    p: &ConvParams,
    top: &Blob,
) -> Result<()> {
    let (_, c, _, _, oh, ow) = conv_shapes(bottom, weights, p)?;
    let mut scratch = ConvScratch::new(
        bottom.shape().dim(0),
        c * p.kernel_h * p.kernel_w,
        oh * ow,
    );
    conv_backward_scratch(eng, bottom, weights, bias, p, top, &mut scratch)
}

pub fn conv_backward_scratch(
    eng: &Engine,
    bottom: &mut Blob,
    weights: &mut Blob,
    bias: Option<&mut Blob>,
    p: &ConvParams,
    top: &Blob,
    scratch: &mut ConvScratch,
) -> Result<()> {
    let (n, c, h, w, oh, ow) = conv_shapes(bottom, weights, p)?;
    let f = p.num_output;
    let patch = c * p.kernel_h * p.kernel_w;
    let spatial = oh * ow;
    if top.shape().dims() != [n, f, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "conv top must be [{n}, {f}, {oh}, {ow}], got {:?}",
            top.shape().dims()
        )));
    }
    scratch.col.resize(n * patch * spatial, 0.0);
    scratch.col_grad.resize(n * patch * spatial, 0.0);

    let (bottom_data_t, bottom_diff_t) = bottom.data_and_diff_mut();
    let bottom_data = bottom_data_t.data();
    let top_diff = top.diff().data();

    // weight gradient: sum over images of G * col^T, one launch
    im2col_batch_into(eng, bottom_data, n, c, h, w, p, oh, ow, &mut scratch.col);
    {
        let mut w_diff = weights.diff_mut().as_matrix_mut(f, patch)?;
        batched_gemm_acc_bt(eng, top_diff, &scratch.col, n, spatial, &mut w_diff)?;
    }

    // bias gradient: per filter, fixed (image, position) order
    if p.bias {
        if let Some(b) = bias {
            if b.count() != f {
                return Err(Error::ShapeMismatch("conv bias count".into()));
            }
            eng.for_each_region(f, b.diff_mut().data_mut(), |filt, slot| {
                let mut acc = slot[0];
                for img in 0..n {
                    let row = &top_diff
                        [(img * f + filt) * spatial..(img * f + filt + 1) * spatial];
                    for &gv in row {
                        acc += gv;
                    }
                }
                slot[0] = acc;
            });
        } else {
            return Err(Error::InvalidInput("conv bias blob missing".into()));
        }
    }

    // input gradient: col2im(W^T * G), batched
    let mut w_t = vec![0.0f32; f * patch];
    transpose_into(f, patch, weights.data().data(), &mut w_t);
    let w_t_mat = MatrixView::from_slice(patch, f, &w_t)?;
    batched_gemm_shared_a(
        eng,
        &w_t_mat,
        top_diff,
        &mut scratch.col_grad,
        n,
        spatial,
        false,
        None,
    )?;
    col2im_batch_into(
        eng,
        &scratch.col_grad,
        n,
        c,
        h,
        w,
        p,
        oh,
        ow,
        bottom_diff_t.data_mut(),
    );
    Ok(())
}

/// Chain layer wrapping the convolution ops with owned weight/bias blobs
/// and reusable column scratch.
pub struct ConvLayer {
    name: String,
    params: ConvParams,
    weights: Option<Blob>,
    bias: Option<Blob>,
    scratch: ConvScratch,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, params: ConvParams) -> Self {
        ConvLayer {
            name: name.into(),
            params,
            weights: None,
            bias: None,
            scratch: ConvScratch::empty(),
        }
    }

    pub fn params_struct(&self) -> &ConvParams {
        &self.params
    }
}

impl Layer for ConvLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "conv"
    }

    fn setup(&mut self, bottom: &Shape, rng: &mut Pcg32) -> Result<()> {
        self.params.validate()?;
        let bd = bottom.dims();
        if bd.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv layer '{}' needs N x C x H x W input, got {bd:?}",
                self.name
            )));
        }
        let c = bd[1];
        let (oh, ow) = self.params.out_dims(bd[2], bd[3])?;
        let f = self.params.num_output;
        let mut weights = Blob::from_dims(&[f, c, self.params.kernel_h, self.params.kernel_w])?;
        let fan_in = c * self.params.kernel_h * self.params.kernel_w;
        xavier_fill(weights.data_mut(), fan_in, rng);
        self.weights = Some(weights);
        if self.params.bias {
            self.bias = Some(Blob::from_dims(&[f])?);
        }
        self.scratch = ConvScratch::new(bd[0], fan_in, oh * ow);
        Ok(())
    }

    fn top_shape(&self, bottom: &Shape) -> Result<Shape> {
        let bd = bottom.dims();
        if bd.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv layer '{}' needs N x C x H x W input, got {bd:?}",
                self.name
            )));
        }
        let (oh, ow) = self.params.out_dims(bd[2], bd[3])?;
        Shape::new(&[bd[0], self.params.num_output, oh, ow])
    }

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let weights = self.weights.as_ref().expect("conv layer not set up");
        conv_forward_scratch(
            eng,
            bottom,
            weights,
            self.bias.as_ref(),
            &self.params,
            top,
            &mut self.scratch,
        )
    }

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let weights = self.weights.as_mut().expect("conv layer not set up");
        conv_backward_scratch(
            eng,
            bottom,
            weights,
            self.bias.as_mut(),
            &self.params,
            top,
            &mut self.scratch,
        )
    }

    fn params_mut(&mut self) -> Vec<&mut Blob> {
        self.weights.iter_mut().chain(self.bias.iter_mut()).collect()
    }

    fn params(&self) -> Vec<&Blob> {
        self.weights.iter().chain(self.bias.iter()).collect()
    }
}
