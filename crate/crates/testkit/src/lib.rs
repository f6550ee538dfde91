//! Brute-force oracles for the kernels under test. Everything here is
//! written as plain nested loops with no shared code with the framework, so
//! the two routes stay independent.

/// Plain triple-loop matrix product: `a` is m x k, `b` is k x n.
pub fn naive_gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Convolution geometry shared by the oracles.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad_h - self.kernel_h) / self.stride_h + 1;
        let ow = (w + 2 * self.pad_w - self.kernel_w) / self.stride_w + 1;
        (oh, ow)
    }
}

/// Direct seven-loop convolution over an N x C x H x W batch with
/// F x C x kh x kw weights and per-filter bias. Out-of-bounds taps read 0.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv_forward(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    f: usize,
    bias: Option<&[f32]>,
    geom: ConvGeom,
) -> Vec<f32> {
    assert_eq!(input.len(), n * c * h * w);
    assert_eq!(weights.len(), f * c * geom.kernel_h * geom.kernel_w);
    let (oh, ow) = geom.out_dims(h, w);
    let mut out = vec![0.0f32; n * f * oh * ow];
    for img in 0..n {
        for filt in 0..f {
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0f32;
                    for ch in 0..c {
                        for ky in 0..geom.kernel_h {
                            for kx in 0..geom.kernel_w {
                                let yi = (yo * geom.stride_h + ky) as isize - geom.pad_h as isize;
                                let xi = (xo * geom.stride_w + kx) as isize - geom.pad_w as isize;
                                if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((img * c + ch) * h + yi as usize) * w + xi as usize];
                                let wv = weights[((filt * c + ch) * geom.kernel_h + ky)
                                    * geom.kernel_w
                                    + kx];
                                acc += iv * wv;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[filt];
                    }
                    out[((img * f + filt) * oh + yo) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

/// Brute-force patch extraction: column t of the result holds the
/// (c, ky, kx)-ordered window for output position t.
pub fn naive_im2col(input: &[f32], c: usize, h: usize, w: usize, geom: ConvGeom) -> Vec<f32> {
    assert_eq!(input.len(), c * h * w);
    let (oh, ow) = geom.out_dims(h, w);
    let rows = c * geom.kernel_h * geom.kernel_w;
    let cols = oh * ow;
    let mut out = vec![0.0f32; rows * cols];
    for ch in 0..c {
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let row = (ch * geom.kernel_h + ky) * geom.kernel_w + kx;
                for yo in 0..oh {
                    for xo in 0..ow {
                        let yi = (yo * geom.stride_h + ky) as isize - geom.pad_h as isize;
                        let xi = (xo * geom.stride_w + kx) as isize - geom.pad_w as isize;
                        let v = if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                            0.0
                        } else {
                            input[(ch * h + yi as usize) * w + xi as usize]
                        };
                        out[row * cols + yo * ow + xo] = v;
                    }
                }
            }
        }
    }
    out
}

/// Max / average pooling over one N x C x H x W batch. Returns the output
/// and, for max, the plane-relative argmax indices.
#[allow(clippy::too_many_arguments)]
pub fn naive_pool(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeom,
    average: bool,
) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = geom.out_dims(h, w);
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut mask = vec![0usize; n * c * oh * ow];
    for img in 0..n {
        for ch in 0..c {
            let plane = &input[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    let mut sum = 0.0f32;
                    let mut count = 0usize;
                    for ky in 0..geom.kernel_h {
                        for kx in 0..geom.kernel_w {
                            let yi = (yo * geom.stride_h + ky) as isize - geom.pad_h as isize;
                            let xi = (xo * geom.stride_w + kx) as isize - geom.pad_w as isize;
                            if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                                continue;
                            }
                            let idx = yi as usize * w + xi as usize;
                            let v = plane[idx];
                            sum += v;
                            count += 1;
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((img * c + ch) * oh + yo) * ow + xo;
                    if average {
                        out[o] = sum / count as f32;
                    } else {
                        out[o] = best;
                        mask[o] = best_idx;
                    }
                }
            }
        }
    }
    (out, mask)
}

/// Central finite difference of `f` with respect to `x[index]`. The scalar
/// under test comes back as f64 so the checker's own reduction does not
/// drown small gradients in f32 cancellation noise; the code path being
/// differentiated still runs in f32.
pub fn central_difference<F>(f: &mut F, x: &mut [f32], index: usize, h: f32) -> f64
where
    F: FnMut(&[f32]) -> f64,
{
    let orig = x[index];
    x[index] = orig + h;
    let plus = f(x);
    x[index] = orig - h;
    let minus = f(x);
    x[index] = orig;
    (plus - minus) / (2.0 * h as f64)
}

/// Checks `analytic[i]` against a central difference of `f` at every
/// element of `x`. Passes when `|a - n| <= max(abs_floor, rel_tol * max(|a|, |n|))`.
pub fn check_gradient<F>(
    mut f: F,
    x: &mut [f32],
    analytic: &[f32],
    h: f32,
    rel_tol: f32,
    abs_floor: f32,
) -> std::result::Result<(), String>
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    for i in 0..x.len() {
        let numeric = central_difference(&mut f, x, i, h) as f32;
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = (a - numeric).abs();
        if err > abs_floor.max(rel_tol * scale) {
            return Err(format!(
                "gradient mismatch at {i}: analytic {a}, numeric {numeric}, err {err}"
            ));
        }
    }
    Ok(())
}

/// Largest relative deviation between two slices (scale floored at `floor`).
pub fn max_rel_err(a: &[f32], b: &[f32], floor: f32) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f32::max)
}

/// True when every pair is bit-identical.
pub fn bitwise_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_gemm_hand_case() {
        let c = naive_gemm(2, 2, 2, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 2 doubles the input
        let geom = ConvGeom {
            kernel_h: 1,
            kernel_w: 1,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
        };
        let input = [1.0, 2.0, 3.0, 4.0];
        let out = naive_conv_forward(&input, 1, 1, 2, 2, &[2.0], 1, None, geom);
        assert_eq!(out, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn central_difference_of_square() {
        let mut f = |x: &[f32]| (x[0] * x[0]) as f64;
        let mut x = vec![3.0f32];
        let d = central_difference(&mut f, &mut x, 0, 1e-3);
        assert!((d - 6.0).abs() < 1e-2);
    }
}
