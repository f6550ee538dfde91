//! Max / average pooling. Parallelism stops at the (n, c) plane loop; the
//! window loops inside one invocation stay sequential, which keeps
//! overlapping-window gradient scatter safe without atomics.

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layers::{BatchCtx, Layer, PoolMethod, PoolParams};
use crate::rng::Pcg32;
use crate::tensor::{Shape, Tensor};

fn pool_shapes(bottom: &Blob, p: &PoolParams) -> Result<(usize, usize, usize, usize, usize, usize)> {
    p.validate()?;
    let bd = bottom.shape().dims();
    if bd.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "pool bottom must be N x C x H x W, got {bd:?}"
        )));
    }
    let (n, c, h, w) = (bd[0], bd[1], bd[2], bd[3]);
    let (oh, ow) = p.out_dims(h, w)?;
    Ok((n, c, h, w, oh, ow))
}

/// Max: top = window max, mask = plane-relative flat index of the first
/// max encountered in (ky, kx) row-major scan order. Average: window sum
/// divided by the count of in-bounds taps.
pub fn pool_forward(
    eng: &Engine,
    bottom: &Blob,
    p: &PoolParams,
    top: &mut Blob,
    mask: &mut Tensor,
) -> Result<()> {
    let (n, c, h, w, oh, ow) = pool_shapes(bottom, p)?;
    if top.shape().dims() != [n, c, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "pool top must be [{n}, {c}, {oh}, {ow}], got {:?}",
            top.shape().dims()
        )));
    }
    if mask.len() != n * c * oh * ow {
        return Err(Error::ShapeMismatch(format!(
            "pool mask needs {} elements, got {}",
            n * c * oh * ow,
            mask.len()
        )));
    }

    let bottom_data = bottom.data().data();
    let planes = n * c;
    let p = *p;
    eng.for_each_region2(
        planes,
        top.data_mut().data_mut(),
        mask.data_mut(),
        |plane_idx, top_plane, mask_plane| {
            let src = &bottom_data[plane_idx * h * w..(plane_idx + 1) * h * w];
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    let mut sum = 0.0f32;
                    let mut count = 0usize;
                    for ky in 0..p.kernel_h {
                        for kx in 0..p.kernel_w {
                            let yi = (yo * p.stride_h + ky) as isize - p.pad_h as isize;
                            let xi = (xo * p.stride_w + kx) as isize - p.pad_w as isize;
                            if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                                continue;
                            }
                            let idx = yi as usize * w + xi as usize;
                            let v = src[idx];
                            match p.method {
                                PoolMethod::Max => {
                                    if v > best {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                                PoolMethod::Average => {
                                    sum += v;
                                    count += 1;
                                }
                            }
                        }
                    }
                    let o = yo * ow + xo;
                    match p.method {
                        PoolMethod::Max => {
                            top_plane[o] = best;
                            mask_plane[o] = best_idx as f32;
                        }
                        PoolMethod::Average => {
                            top_plane[o] = sum / count as f32;
                            mask_plane[o] = 0.0;
                        }
                    }
                }
            }
        },
    );
    Ok(())
}

/// Max: bottom.diff[mask[i]] += top.diff[i]. Average: each in-bounds window
/// tap gains top.diff[i] / count. bottom.diff is zeroed first.
pub fn pool_backward(
    eng: &Engine,
    bottom: &mut Blob,
    p: &PoolParams,
    top: &Blob,
    mask: &Tensor,
) -> Result<()> {
    let (n, c, h, w, oh, ow) = pool_shapes(bottom, p)?;
    if top.shape().dims() != [n, c, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "pool top must be [{n}, {c}, {oh}, {ow}], got {:?}",
            top.shape().dims()
        )));
    }
    if mask.len() != n * c * oh * ow {
        return Err(Error::ShapeMismatch("pool mask size".into()));
    }

    let top_diff = top.diff().data();
    let mask_data = mask.data();
    let planes = n * c;
    let plane = h * w;
    let out_plane = oh * ow;
    let p = *p;
    let mut failed = std::sync::atomic::AtomicBool::new(false);
    eng.for_each_region(planes, bottom.diff_mut().data_mut(), |plane_idx, bd| {
        bd.fill(0.0);
        let td = &top_diff[plane_idx * out_plane..(plane_idx + 1) * out_plane];
        let mk = &mask_data[plane_idx * out_plane..(plane_idx + 1) * out_plane];
        match p.method {
            PoolMethod::Max => {
                for (o, &g) in td.iter().enumerate() {
                    let idx = mk[o] as usize;
                    if idx >= plane {
                        failed.store(true, std::sync::atomic::Ordering::Relaxed);
                        return;
                    }
                    bd[idx] += g;
                }
            }
            PoolMethod::Average => {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut count = 0usize;
                        let mut taps = [0usize; 64];
                        let mut taps_len = 0usize;
                        for ky in 0..p.kernel_h {
                            for kx in 0..p.kernel_w {
                                let yi = (yo * p.stride_h + ky) as isize - p.pad_h as isize;
                                let xi = (xo * p.stride_w + kx) as isize - p.pad_w as isize;
                                if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                                    continue;
                                }
                                count += 1;
                                if taps_len < taps.len() {
                                    taps[taps_len] = yi as usize * w + xi as usize;
                                    taps_len += 1;
                                }
                            }
                        }
                        let share = td[yo * ow + xo] / count as f32;
                        if taps_len == count {
                            for &idx in &taps[..taps_len] {
                                bd[idx] += share;
                            }
                        } else {
                            // window larger than the fixed tap buffer: rescan
                            for ky in 0..p.kernel_h {
                                for kx in 0..p.kernel_w {
                                    let yi =
                                        (yo * p.stride_h + ky) as isize - p.pad_h as isize;
                                    let xi =
                                        (xo * p.stride_w + kx) as isize - p.pad_w as isize;
                                    if yi < 0
                                        || xi < 0
                                        || yi >= h as isize
                                        || xi >= w as isize
                                    {
                                        continue;
                                    }
                                    bd[yi as usize * w + xi as usize] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    if *failed.get_mut() {
        return Err(Error::InvalidInput(
            "pool mask holds an out-of-range input index".into(),
        ));
    }
    Ok(())
}

/// Chain layer owning the origin mask scratch.
pub struct PoolLayer {
    name: String,
    params: PoolParams,
    mask: Tensor,
}

impl PoolLayer {
    pub fn new(name: impl Into<String>, params: PoolParams) -> Self {
        PoolLayer {
            name: name.into(),
            params,
            mask: Tensor::new(Shape::new(&[1]).expect("static shape"), 0.0),
        }
    }
}

impl Layer for PoolLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "pool"
    }

    fn setup(&mut self, bottom: &Shape, _rng: &mut Pcg32) -> Result<()> {
        self.params.validate()?;
        let top = self.top_shape(bottom)?;
        self.mask = Tensor::new(top, 0.0);
        Ok(())
    }

    fn top_shape(&self, bottom: &Shape) -> Result<Shape> {
        let bd = bottom.dims();
        if bd.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "pool layer '{}' needs N x C x H x W input, got {bd:?}",
                self.name
            )));
        }
        let (oh, ow) = self.params.out_dims(bd[2], bd[3])?;
        Shape::new(&[bd[0], bd[1], oh, ow])
    }

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        pool_forward(eng, bottom, &self.params, top, &mut self.mask)
    }

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        pool_backward(eng, bottom, &self.params, top, &self.mask)
    }
}
