//! SGD with momentum, weight decay and a learning-rate policy, driving the
//! forward/backward/update cycle over a net.

use std::path::{Path, PathBuf};

use crate::data::{Batcher, Dataset};
use crate::error::{Error, Result};
use crate::net::Net;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrPolicy {
    Fixed,
    /// base_lr * (1 + gamma * iter)^(-power)
    Inv,
}

#[derive(Clone, Debug)]
pub struct SolverSpec {
    pub base_lr: f32,
    pub lr_policy: LrPolicy,
    pub gamma: f32,
    pub power: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub max_iter: usize,
    pub test_interval: usize,
    pub test_iter: usize,
    pub snapshot_interval: usize,
    pub seed: u64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            base_lr: 0.01,
            lr_policy: LrPolicy::Fixed,
            gamma: 0.0,
            power: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
            max_iter: 0,
            test_interval: 0,
            test_iter: 0,
            snapshot_interval: 0,
            seed: 1,
        }
    }
}

impl SolverSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.lr_policy == LrPolicy::Inv && (self.gamma < 0.0 || !self.power.is_finite()) {
            return Err(Error::Config("inv policy needs gamma >= 0 and finite power".into()));
        }
        if self.test_interval > 0 && self.test_iter == 0 {
            return Err(Error::Config(
                "test_interval set but test_iter is 0".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iter: usize) -> f32 {
        match self.lr_policy {
            LrPolicy::Fixed => self.base_lr,
            LrPolicy::Inv => {
                self.base_lr * (1.0 + self.gamma * iter as f32).powf(-self.power)
            }
        }
    }
}

/// Iteration counter plus one momentum buffer per learnable blob.
pub struct SolverState {
    pub iter: usize,
    history: Vec<Tensor>,
}

impl SolverState {
    pub fn new() -> Self {
        SolverState {
            iter: 0,
            history: Vec::new(),
        }
    }
}

impl Default for SolverState {
    fn default() -> Self {
        SolverState::new()
    }
}

/// One parameter update over populated diffs:
/// g = diff + weight_decay * data; v = momentum * v + lr(iter) * g;
/// data -= v; iter += 1.
pub fn sgd_step(
    state: &mut SolverState,
    spec: &SolverSpec,
    params: &mut [&mut crate::blob::Blob],
) -> Result<()> {
    if state.history.is_empty() {
        state.history = params
            .iter()
            .map(|b| Tensor::new(b.shape().clone(), 0.0))
            .collect();
    }
    if state.history.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} momentum buffers for {} learnables",
            state.history.len(),
            params.len()
        )));
    }
    let lr = spec.learning_rate(state.iter);
    for (blob, hist) in params.iter_mut().zip(state.history.iter_mut()) {
        if hist.shape() != blob.shape() {
            return Err(Error::ShapeMismatch(
                "momentum buffer shape drifted from its blob".into(),
            ));
        }
        let (data, diff) = blob.data_and_diff_mut();
        for ((g, d), v) in diff
            .data_mut()
            .iter_mut()
            .zip(data.data())
            .zip(hist.data_mut())
        {
            let grad = *g + spec.weight_decay * d;
            *v = spec.momentum * *v + lr * grad;
            *g = *v;
        }
        blob.update();
    }
    state.iter += 1;
    Ok(())
}

/// Stream of observable training events, in emission order.
#[derive(Clone, Debug)]
pub enum TrainEvent {
    TrainIter { iter: usize, loss: f32 },
    Test { iter: usize, loss: f32, accuracy: f32 },
    Snapshot { iter: usize, path: PathBuf },
}

pub struct Solver {
    pub spec: SolverSpec,
    pub state: SolverState,
}

impl Solver {
    pub fn new(spec: SolverSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Solver {
            spec,
            state: SolverState::new(),
        })
    }

    /// Zero diffs, forward, backward, update. Returns the batch loss.
    pub fn step(&mut self, net: &mut Net, images: &[f32], labels: &[usize]) -> Result<f32> {
        net.zero_param_diffs();
        let loss = net.forward(images, Some(labels))?;
        net.backward()?;
        let mut params = net.params_mut();
        sgd_step(&mut self.state, &self.spec, &mut params)?;
        Ok(loss)
    }

    /// Runs `max_iter` steps; tests every `test_interval` iterations (and
    /// after the last step); snapshots at `snapshot_interval` and at the end
    /// when a prefix is given. Deterministic given (spec, seed, net seed).
    pub fn train(
        &mut self,
        net: &mut Net,
        train: &Dataset,
        test: Option<&Dataset>,
        snapshot_prefix: Option<&Path>,
        emit: &mut dyn FnMut(&TrainEvent),
    ) -> Result<()> {
        let mut batcher = Batcher::new(train, net.batch(), self.spec.seed)?;
        let mut images = vec![0.0f32; net.batch() * net.sample_len()];
        let mut labels = Vec::with_capacity(net.batch());

        while self.state.iter < self.spec.max_iter {
            let iter = self.state.iter;
            if let Some(test_ds) = test {
                if self.spec.test_interval > 0 && iter % self.spec.test_interval == 0 {
                    let (loss, accuracy) = net.evaluate(test_ds, self.spec.test_iter)?;
                    emit(&TrainEvent::Test {
                        iter,
                        loss,
                        accuracy,
                    });
                }
            }
            batcher.next_batch(&mut images, &mut labels)?;
            let loss = self.step(net, &images, &labels)?;
            emit(&TrainEvent::TrainIter { iter, loss });

            if self.spec.snapshot_interval > 0
                && self.state.iter % self.spec.snapshot_interval == 0
            {
                if let Some(prefix) = snapshot_prefix {
                    let path = snapshot_path(prefix, &format!("iter_{}", self.state.iter));
                    net.save_snapshot(&path)?;
                    emit(&TrainEvent::Snapshot {
                        iter: self.state.iter,
                        path,
                    });
                }
            }
        }

        if let Some(test_ds) = test {
            if self.spec.test_interval > 0 {
                let (loss, accuracy) = net.evaluate(test_ds, self.spec.test_iter)?;
                emit(&TrainEvent::Test {
                    iter: self.state.iter,
                    loss,
                    accuracy,
                });
            }
        }
        if let Some(prefix) = snapshot_prefix {
            let path = snapshot_path(prefix, "final");
            net.save_snapshot(&path)?;
            emit(&TrainEvent::Snapshot {
                iter: self.state.iter,
                path,
            });
        }
        Ok(())
    }
}

/// `prefix` + `_{tag}.pnsn`, keeping any parent directory of the prefix.
pub fn snapshot_path(prefix: &Path, tag: &str) -> PathBuf {
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".into());
    let file = format!("{stem}_{tag}.pnsn");
    match prefix.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.join(file),
        _ => PathBuf::from(file),
    }
}
