//! Leaky ReLU. The layer runs in place and snapshots its input during
//! training so the backward pass sees pre-activation values.

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::Result;
use crate::layers::{BatchCtx, Layer, ReluParams};
use crate::rng::Pcg32;
use crate::tensor::Shape;

/// top[i] = bottom[i] if positive, else slope * bottom[i].
pub fn relu_forward(eng: &Engine, bottom: &[f32], slope: f32, top: &mut [f32]) {
    debug_assert_eq!(bottom.len(), top.len());
    eng.fill(top, |i| {
        let x = bottom[i];
        if x > 0.0 {
            x
        } else {
            slope * x
        }
    });
}

pub fn relu_forward_in_place(eng: &Engine, data: &mut [f32], slope: f32) {
    let n = data.len();
    eng.for_each_region(n, data, |_, slot| {
        let x = slot[0];
        slot[0] = if x > 0.0 { x } else { slope * x };
    });
}

/// bottom.diff[i] = top.diff[i] * (1 if bottom.data[i] > 0 else slope).
pub fn relu_backward(
    eng: &Engine,
    top_diff: &[f32],
    bottom_data: &[f32],
    slope: f32,
    bottom_diff: &mut [f32],
) {
    debug_assert_eq!(top_diff.len(), bottom_diff.len());
    debug_assert_eq!(bottom_data.len(), bottom_diff.len());
    eng.fill(bottom_diff, |i| {
        let scale = if bottom_data[i] > 0.0 { 1.0 } else { slope };
        top_diff[i] * scale
    });
}

pub fn relu_backward_in_place(eng: &Engine, diff: &mut [f32], bottom_data: &[f32], slope: f32) {
    let n = diff.len();
    eng.for_each_region(n, diff, |i, slot| {
        let scale = if bottom_data[i] > 0.0 { 1.0 } else { slope };
        slot[0] *= scale;
    });
}

pub struct ReluLayer {
    name: String,
    params: ReluParams,
    input_snapshot: Vec<f32>,
}

impl ReluLayer {
    pub fn new(name: impl Into<String>, params: ReluParams) -> Self {
        ReluLayer {
            name: name.into(),
            params,
            input_snapshot: Vec::new(),
        }
    }
}

impl Layer for ReluLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "relu"
    }

    fn setup(&mut self, bottom: &Shape, _rng: &mut Pcg32) -> Result<()> {
        self.input_snapshot = vec![0.0; bottom.count()];
        Ok(())
    }

    fn top_shape(&self, bottom: &Shape) -> Result<Shape> {
        Ok(bottom.clone())
    }

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        relu_forward(
            eng,
            bottom.data().data(),
            self.params.negative_slope,
            top.data_mut().data_mut(),
        );
        Ok(())
    }

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let (data, diff) = bottom.data_and_diff_mut();
        relu_backward(
            eng,
            top.diff().data(),
            data.data(),
            self.params.negative_slope,
            diff.data_mut(),
        );
        Ok(())
    }

    fn supports_in_place(&self) -> bool {
        true
    }

    fn forward_in_place(
        &mut self,
        eng: &Engine,
        blob: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        self.input_snapshot.copy_from_slice(blob.data().data());
        relu_forward_in_place(eng, blob.data_mut().data_mut(), self.params.negative_slope);
        Ok(())
    }

    fn backward_in_place(
        &mut self,
        eng: &Engine,
        blob: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        relu_backward_in_place(
            eng,
            blob.diff_mut().data_mut(),
            &self.input_snapshot,
            self.params.negative_slope,
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_cases() {
        let eng = Engine::sequential();
        let mut out = vec![0.0f32; 3];
        relu_forward(&eng, &[-1.0, 2.0, 0.0], 0.0, &mut out);
        assert_eq!(out, vec![0.0, 2.0, 0.0]);

        let mut out = vec![0.0f32; 1];
        relu_forward(&eng, &[-2.0], 0.1, &mut out);
        assert!((out[0] + 0.2).abs() <= 1e-7);

        // non-negative input is the identity
        let xs = [0.5f32, 3.0, 7.25];
        let mut out = vec![0.0f32; 3];
        relu_forward(&eng, &xs, 0.25, &mut out);
        assert_eq!(out, xs);
    }

    #[test]
    fn in_place_matches_out_of_place() {
        let eng = Engine::sequential();
        let xs = [-3.0f32, -0.5, 0.0, 0.5, 3.0];
        let mut out = vec![0.0f32; 5];
        relu_forward(&eng, &xs, 0.2, &mut out);
        let mut inplace = xs.to_vec();
        relu_forward_in_place(&eng, &mut inplace, 0.2);
        assert_eq!(out, inplace);
    }

    #[test]
    fn backward_cases() {
        let eng = Engine::sequential();
        // all-positive input passes gradients through unchanged
        let mut bd = vec![0.0f32; 3];
        relu_backward(&eng, &[1.0, -2.0, 3.0], &[0.5, 1.0, 2.0], 0.0, &mut bd);
        assert_eq!(bd, vec![1.0, -2.0, 3.0]);

        // slope 0, all-negative input kills gradients
        let mut bd = vec![9.0f32; 3];
        relu_backward(&eng, &[1.0, -2.0, 3.0], &[-0.5, -1.0, -2.0], 0.0, &mut bd);
        assert_eq!(bd, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_snapshot_preserves_preactivation() {
        let eng = Engine::sequential();
        let mut layer = ReluLayer::new("relu", ReluParams { negative_slope: 0.5 });
        let shape = Shape::new(&[4]).unwrap();
        let mut rng = Pcg32::new(1, 0);
        layer.setup(&shape, &mut rng).unwrap();
        let mut blob = Blob::new(shape);
        blob.data_mut()
            .data_mut()
            .copy_from_slice(&[-2.0, -1.0, 1.0, 2.0]);
        blob.diff_mut().data_mut().copy_from_slice(&[1.0; 4]);
        let ctx = BatchCtx::default();
        layer.forward_in_place(&eng, &mut blob, &ctx).unwrap();
        assert_eq!(blob.data().data(), &[-1.0, -0.5, 1.0, 2.0]);
        layer.backward_in_place(&eng, &mut blob, &ctx).unwrap();
        // derivative uses the snapshot, not the activated values
        assert_eq!(blob.diff().data(), &[0.5, 0.5, 1.0, 1.0]);
    }
}
