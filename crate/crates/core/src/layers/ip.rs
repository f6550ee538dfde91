//! InnerProduct (fully connected) layer: top = bottom * W^T + bias, with the
//! bias applied by an explicit row-add kernel instead of a rank-1 gemm.

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layers::{xavier_fill, BatchCtx, IpParams, Layer};
use crate::linalg::{add_vector_to_rows, gemm};
use crate::rng::Pcg32;
use crate::tensor::Shape;

fn ip_dims(bottom: &Blob, weights: &Blob, p: &IpParams) -> Result<(usize, usize, usize)> {
    if p.num_output == 0 {
        return Err(Error::InvalidShape("ip num_output must be >= 1".into()));
    }
    let m = bottom.shape().dim(0);
    let count = bottom.count();
    if count % m != 0 {
        return Err(Error::ShapeMismatch("ip bottom count not divisible by batch".into()));
    }
    let k = count / m;
    let n = p.num_output;
    let expect = if p.transpose { [k, n] } else { [n, k] };
    if weights.shape().dims() != expect {
        return Err(Error::ShapeMismatch(format!(
            "ip weights must be {expect:?}, got {:?}",
            weights.shape().dims()
        )));
    }
    Ok((m, k, n))
}

/// top (M x N) = bottom (M x K) * W'(K x N); W' is the stored weight matrix
/// read through `getDataAsMatrix(K, N, !transpose)`.
pub fn ip_forward(
    eng: &Engine,
    bottom: &Blob,
    weights: &Blob,
    bias: Option<&Blob>,
    p: &IpParams,
    top: &mut Blob,
) -> Result<()> {
    let (m, k, n) = ip_dims(bottom, weights, p)?;
    if top.count() != m * n || top.shape().dim(0) != m {
        return Err(Error::ShapeMismatch(format!(
            "ip top must view as {m}x{n}, got {:?}",
            top.shape().dims()
        )));
    }
    let a = bottom.data_as_matrix(m, k, false)?;
    // stored [N, K] needs the transposed view; stored [K, N] reads directly
    let b = if p.transpose {
        weights.data_as_matrix(k, n, false)?
    } else {
        weights.data_as_matrix(n, k, true)?
    };
    let mut c = top.data_as_matrix_mut(m, n)?;
    gemm(eng, &a, &b, &mut c, false)?;
    if p.bias {
        let bv = bias.ok_or_else(|| Error::InvalidInput("ip bias blob missing".into()))?;
        if bv.count() != n {
            return Err(Error::ShapeMismatch(format!(
                "ip bias must have {n} elements, got {}",
                bv.count()
            )));
        }
        add_vector_to_rows(eng, &mut c, bv.data().data())?;
    }
    Ok(())
}

/// weights.diff += top.diff^T * bottom.data; bias.diff[j] += column sums of
/// top.diff; bottom.diff = top.diff * W.
pub fn ip_backward(
    eng: &Engine,
    bottom: &mut Blob,
    weights: &mut Blob,
    bias: Option<&mut Blob>,
    p: &IpParams,
    top: &Blob,
) -> Result<()> {
    let (m, k, n) = ip_dims(bottom, weights, p)?;
    if top.count() != m * n {
        return Err(Error::ShapeMismatch("ip top count".into()));
    }
    let top_diff = top.diff_as_matrix(m, n, false)?;

    // weight gradient
    if p.transpose {
        // stored [K, N]: diff += bottom.data^T (K x M) * top.diff (M x N)
        let a = bottom.data_as_matrix(m, k, true)?;
        let mut c = weights.diff_as_matrix_mut(k, n)?;
        gemm(eng, &a, &top_diff, &mut c, true)?;
    } else {
        // stored [N, K]: diff += top.diff^T (N x M) * bottom.data (M x K)
        let a = top.diff_as_matrix(m, n, true)?;
        let b = bottom.data_as_matrix(m, k, false)?;
        let mut c = weights.diff_as_matrix_mut(n, k)?;
        gemm(eng, &a, &b, &mut c, true)?;
    }

    // bias gradient: column sums, one invocation per output feature
    if p.bias {
        let b = bias.ok_or_else(|| Error::InvalidInput("ip bias blob missing".into()))?;
        if b.count() != n {
            return Err(Error::ShapeMismatch("ip bias count".into()));
        }
        let td = top.diff().data();
        eng.for_each_region(n, b.diff_mut().data_mut(), |j, slot| {
            let mut acc = slot[0];
            for i in 0..m {
                acc += td[i * n + j];
            }
            slot[0] = acc;
        });
    }

    // input gradient: top.diff (M x N) * W (N x K)
    let w_mat = if p.transpose {
        weights.data_as_matrix(k, n, true)?
    } else {
        weights.data_as_matrix(n, k, false)?
    };
    let mut bd = bottom.diff_as_matrix_mut(m, k)?;
    gemm(eng, &top_diff, &w_mat, &mut bd, false)?;
    Ok(())
}

/// Chain layer owning the weight/bias blobs; flattens any bottom shape to
/// batch x features.
pub struct IpLayer {
    name: String,
    params: IpParams,
    weights: Option<Blob>,
    bias: Option<Blob>,
}

impl IpLayer {
    pub fn new(name: impl Into<String>, params: IpParams) -> Self {
        IpLayer {
            name: name.into(),
            params,
            weights: None,
            bias: None,
        }
    }
}

impl Layer for IpLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "ip"
    }

    fn setup(&mut self, bottom: &Shape, rng: &mut Pcg32) -> Result<()> {
        let m = bottom.dim(0);
        let k = bottom.count() / m;
        let n = self.params.num_output;
        if n == 0 {
            return Err(Error::InvalidShape("ip num_output must be >= 1".into()));
        }
        let dims = if self.params.transpose { [k, n] } else { [n, k] };
        let mut weights = Blob::from_dims(&dims)?;
        xavier_fill(weights.data_mut(), k, rng);
        self.weights = Some(weights);
        if self.params.bias {
            self.bias = Some(Blob::from_dims(&[n])?);
        }
        Ok(())
    }

    fn top_shape(&self, bottom: &Shape) -> Result<Shape> {
        Shape::new(&[bottom.dim(0), self.params.num_output])
    }

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let weights = self.weights.as_ref().expect("ip layer not set up");
        ip_forward(eng, bottom, weights, self.bias.as_ref(), &self.params, top)
    }

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let weights = self.weights.as_mut().expect("ip layer not set up");
        ip_backward(eng, bottom, weights, self.bias.as_mut(), &self.params, top)
    }

    fn params_mut(&mut self) -> Vec<&mut Blob> {
        self.weights.iter_mut().chain(self.bias.iter_mut()).collect()
    }

    fn params(&self) -> Vec<&Blob> {
        self.weights.iter().chain(self.bias.iter()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Policy;

    fn blob_from(dims: &[usize], data: &[f32]) -> Blob {
        let mut b = Blob::from_dims(dims).unwrap();
        b.data_mut().data_mut().copy_from_slice(data);
        b
    }

    #[test]
    fn forward_hand_oracle() {
        // x = [1, 2], W = [[3, 4]], b = [5] -> 1*3 + 2*4 + 5 = 16
        let eng = Engine::sequential();
        let bottom = blob_from(&[1, 2], &[1.0, 2.0]);
        let weights = blob_from(&[1, 2], &[3.0, 4.0]);
        let bias = blob_from(&[1], &[5.0]);
        let p = IpParams {
            num_output: 1,
            bias: true,
            transpose: false,
        };
        let mut top = Blob::from_dims(&[1, 1]).unwrap();
        ip_forward(&eng, &bottom, &weights, Some(&bias), &p, &mut top).unwrap();
        assert_eq!(top.data().data(), &[16.0]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let eng = Engine::sequential();
        let bottom = blob_from(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut weights = Blob::from_dims(&[3, 3]).unwrap();
        for i in 0..3 {
            weights.data_mut().data_mut()[i * 3 + i] = 1.0;
        }
        let p = IpParams {
            num_output: 3,
            bias: false,
            transpose: false,
        };
        let mut top = Blob::from_dims(&[2, 3]).unwrap();
        ip_forward(&eng, &bottom, &weights, None, &p, &mut top).unwrap();
        assert_eq!(top.data().data(), bottom.data().data());
    }

    #[test]
    fn zero_weights_bias_only() {
        let eng = Engine::sequential();
        let bottom = blob_from(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let weights = Blob::from_dims(&[3, 2]).unwrap();
        let bias = blob_from(&[3], &[0.5, -1.0, 2.0]);
        let p = IpParams {
            num_output: 3,
            bias: true,
            transpose: false,
        };
        let mut top = Blob::from_dims(&[2, 3]).unwrap();
        ip_forward(&eng, &bottom, &weights, Some(&bias), &p, &mut top).unwrap();
        assert_eq!(top.data().data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn transpose_storage_matches_untransposed() {
        let eng = Engine::new(Policy::multithreaded(2));
        let mut rng = Pcg32::new(61, 0);
        let x: Vec<f32> = (0..3 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f32> = (0..2 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect(); // [N,K] order
        let bottom = blob_from(&[3, 4], &x);
        let weights_nk = blob_from(&[2, 4], &w);
        // same weights stored [K, N]
        let mut w_kn = vec![0.0f32; 8];
        for i in 0..2 {
            for j in 0..4 {
                w_kn[j * 2 + i] = w[i * 4 + j];
            }
        }
        let weights_kn = blob_from(&[4, 2], &w_kn);

        let mut top_a = Blob::from_dims(&[3, 2]).unwrap();
        let mut top_b = Blob::from_dims(&[3, 2]).unwrap();
        ip_forward(
            &eng,
            &bottom,
            &weights_nk,
            None,
            &IpParams { num_output: 2, bias: false, transpose: false },
            &mut top_a,
        )
        .unwrap();
        ip_forward(
            &eng,
            &bottom,
            &weights_kn,
            None,
            &IpParams { num_output: 2, bias: false, transpose: true },
            &mut top_b,
        )
        .unwrap();
        for (a, b) in top_a.data().data().iter().zip(top_b.data().data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn backward_zero_top_diff() {
        let eng = Engine::sequential();
        let mut bottom = blob_from(&[2, 3], &[1.0; 6]);
        let mut weights = blob_from(&[2, 3], &[1.0; 6]);
        let mut bias = Blob::from_dims(&[2]).unwrap();
        let top = Blob::from_dims(&[2, 2]).unwrap();
        let p = IpParams { num_output: 2, bias: true, transpose: false };
        ip_backward(&eng, &mut bottom, &mut weights, Some(&mut bias), &p, &top).unwrap();
        assert!(weights.diff().data().iter().all(|&v| v == 0.0));
        assert!(bias.diff().data().iter().all(|&v| v == 0.0));
        assert!(bottom.diff().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_weight_grad_is_outer_product() {
        let eng = Engine::sequential();
        let x = [1.0f32, -2.0, 0.5];
        let g = [2.0f32, 3.0];
        let mut bottom = blob_from(&[1, 3], &x);
        let mut weights = blob_from(&[2, 3], &[0.0; 6]);
        let mut top = Blob::from_dims(&[1, 2]).unwrap();
        top.diff_mut().data_mut().copy_from_slice(&g);
        let p = IpParams { num_output: 2, bias: false, transpose: false };
        ip_backward(&eng, &mut bottom, &mut weights, None, &p, &top).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((weights.diff().data()[i * 3 + j] - g[i] * x[j]).abs() <= 1e-6);
            }
        }
    }
}
