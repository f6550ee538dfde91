//! SoftMax, SoftMax-with-loss and the accuracy metric. Rows are processed
//! independently, max-subtracted before exponentiation; the loss reduction
//! runs on the orchestrating thread in fixed sample order.

use crate::blob::Blob;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layers::{BatchCtx, Layer};
use crate::rng::Pcg32;
use crate::tensor::{MatrixView, MatrixViewMut, Shape, Tensor};

/// Smallest argument fed to ln when a probability underflows to zero.
const LN_CLAMP: f32 = 1e-37;

/// Per row: top[j] = exp(x[j] - max(x)) / sum_k exp(x[k] - max(x)).
pub fn softmax_forward(eng: &Engine, bottom: &MatrixView<'_>, top: &mut MatrixViewMut<'_>) -> Result<()> {
    if bottom.rows() != top.rows() || bottom.cols() != top.cols() {
        return Err(Error::ShapeMismatch(format!(
            "softmax {}x{} vs {}x{}",
            bottom.rows(),
            bottom.cols(),
            top.rows(),
            top.cols()
        )));
    }
    let cols = bottom.cols();
    let src = bottom.data();
    eng.for_each_row(top, |i, row| {
        let x = &src[i * cols..(i + 1) * cols];
        let mut max = f32::NEG_INFINITY;
        for &v in x {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0f32;
        for (slot, &v) in row.iter_mut().zip(x) {
            let e = (v - max).exp();
            *slot = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for slot in row.iter_mut() {
            *slot *= inv;
        }
    });
    Ok(())
}

/// Per row: bottom.diff[i] = y[i] * (top.diff[i] - sum_j top.diff[j] * y[j]).
pub fn softmax_backward(
    eng: &Engine,
    top_data: &MatrixView<'_>,
    top_diff: &MatrixView<'_>,
    bottom_diff: &mut MatrixViewMut<'_>,
) -> Result<()> {
    let (m, d) = (top_data.rows(), top_data.cols());
    if top_diff.rows() != m || top_diff.cols() != d || bottom_diff.rows() != m || bottom_diff.cols() != d {
        return Err(Error::ShapeMismatch("softmax backward shapes".into()));
    }
    let y = top_data.data();
    let g = top_diff.data();
    eng.for_each_row(bottom_diff, |i, row| {
        let yr = &y[i * d..(i + 1) * d];
        let gr = &g[i * d..(i + 1) * d];
        let mut dot = 0.0f32;
        for (gv, yv) in gr.iter().zip(yr) {
            dot += gv * yv;
        }
        for ((slot, gv), yv) in row.iter_mut().zip(gr).zip(yr) {
            *slot = yv * (gv - dot);
        }
    });
    Ok(())
}

/// loss = -(1/M) * sum_i ln(p_i[label_i]); probabilities land in `probs`.
pub fn softmax_loss_forward(
    eng: &Engine,
    logits: &MatrixView<'_>,
    labels: &[usize],
    probs: &mut MatrixViewMut<'_>,
) -> Result<f32> {
    let (m, d) = (logits.rows(), logits.cols());
    if labels.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} labels for a batch of {m}",
            labels.len()
        )));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= d {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range [0, {d}) at sample {i}"
            )));
        }
    }
    softmax_forward(eng, logits, probs)?;
    let p = probs.data();
    let mut loss = 0.0f32;
    for (i, &l) in labels.iter().enumerate() {
        loss -= p[i * d + l].max(LN_CLAMP).ln();
    }
    Ok(loss / m as f32)
}

/// bottom.diff[i, j] = loss_weight * (p[i, j] - [j == label_i]) / M.
pub fn softmax_loss_backward(
    eng: &Engine,
    probs: &MatrixView<'_>,
    labels: &[usize],
    loss_weight: f32,
    bottom_diff: &mut MatrixViewMut<'_>,
) -> Result<()> {
    let (m, d) = (probs.rows(), probs.cols());
    if labels.len() != m || bottom_diff.rows() != m || bottom_diff.cols() != d {
        return Err(Error::ShapeMismatch("softmax loss backward shapes".into()));
    }
    let p = probs.data();
    let scale = loss_weight / m as f32;
    eng.for_each_row(bottom_diff, |i, row| {
        let pr = &p[i * d..(i + 1) * d];
        let label = labels[i];
        for (j, (slot, &pv)) in row.iter_mut().zip(pr).enumerate() {
            let indicator = if j == label { 1.0 } else { 0.0 };
            *slot = scale * (pv - indicator);
        }
    });
    Ok(())
}

/// Fraction of samples whose true label ranks among the top-k scores.
/// Ranking is by descending score with ties broken by ascending class index.
pub fn accuracy(logits: &MatrixView<'_>, labels: &[usize], top_k: usize) -> Result<f32> {
    let (m, d) = (logits.rows(), logits.cols());
    if top_k == 0 || top_k > d {
        return Err(Error::InvalidInput(format!(
            "top_k {top_k} not in [1, {d}]"
        )));
    }
    if labels.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} labels for a batch of {m}",
            labels.len()
        )));
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label >= d {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range [0, {d}) at sample {i}"
            )));
        }
        let row = logits.row(i);
        let target = row[label];
        // rank = classes strictly better, plus earlier classes tied with it
        let mut rank = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > target || (v == target && j < label) {
                rank += 1;
            }
        }
        if rank < top_k {
            hits += 1;
        }
    }
    Ok(hits as f32 / m as f32)
}

fn as_rows(shape: &Shape) -> (usize, usize) {
    let m = shape.dim(0);
    (m, shape.count() / m)
}

/// Standalone SoftMax layer (probabilities out, same shape as in).
pub struct SoftmaxLayer {
    name: String,
}

impl SoftmaxLayer {
    pub fn new(name: impl Into<String>) -> Self {
        SoftmaxLayer { name: name.into() }
    }
}

impl Layer for SoftmaxLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "softmax"
    }

    fn setup(&mut self, _bottom: &Shape, _rng: &mut Pcg32) -> Result<()> {
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
        let (m, d) = as_rows(bottom.shape());
        let src = bottom.data_as_matrix(m, d, false)?;
        let mut dst = top.data_as_matrix_mut(m, d)?;
        softmax_forward(eng, &src, &mut dst)
    }

    fn backward(
        &mut self,
        eng: &Engine,
        top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let (m, d) = as_rows(bottom.shape());
        let y = top.data_as_matrix(m, d, false)?;
        let g = top.diff_as_matrix(m, d, false)?;
        let mut bd = bottom.diff_as_matrix_mut(m, d)?;
        softmax_backward(eng, &y, &g, &mut bd)
    }
}

/// SoftMax + multinomial logistic loss; caches the probabilities between
/// forward and backward. Top blob is a single scalar holding the loss.
pub struct SoftmaxLossLayer {
    name: String,
    loss_weight: f32,
    probs: Tensor,
    labels: Vec<usize>,
    last_loss: Option<f32>,
}

impl SoftmaxLossLayer {
    pub fn new(name: impl Into<String>, loss_weight: f32) -> Self {
        SoftmaxLossLayer {
            name: name.into(),
            loss_weight,
            probs: Tensor::new(Shape::new(&[1]).expect("static shape"), 0.0),
            labels: Vec::new(),
            last_loss: None,
        }
    }

    pub fn probabilities(&self) -> &Tensor {
        &self.probs
    }
}

impl Layer for SoftmaxLossLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "softmax_loss"
    }

    fn setup(&mut self, bottom: &Shape, _rng: &mut Pcg32) -> Result<()> {
        let (m, d) = as_rows(bottom);
        self.probs = Tensor::zeros(&[m, d])?;
        Ok(())
    }

    fn top_shape(&self, _bottom: &Shape) -> Result<Shape> {
        Shape::new(&[1])
    }

    fn forward(
        &mut self,
        eng: &Engine,
        bottom: &Blob,
        top: &mut Blob,
        ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let labels = ctx
            .labels
            .ok_or_else(|| Error::InvalidInput("softmax_loss needs labels".into()))?;
        let (m, d) = as_rows(bottom.shape());
        let logits = bottom.data_as_matrix(m, d, false)?;
        let mut probs = self.probs.as_matrix_mut(m, d)?;
        let loss = softmax_loss_forward(eng, &logits, labels, &mut probs)?;
        self.labels.clear();
        self.labels.extend_from_slice(labels);
        self.last_loss = Some(loss);
        top.data_mut().data_mut()[0] = loss;
        Ok(())
    }

    fn backward(
        &mut self,
        eng: &Engine,
        _top: &Blob,
        bottom: &mut Blob,
        _ctx: &BatchCtx<'_>,
    ) -> Result<()> {
        let (m, d) = as_rows(bottom.shape());
        let probs = self.probs.as_matrix(m, d)?;
        let mut bd = bottom.diff_as_matrix_mut(m, d)?;
        softmax_loss_backward(eng, &probs, &self.labels, self.loss_weight, &mut bd)
    }

    fn loss(&self) -> Option<f32> {
        self.last_loss
    }
}
