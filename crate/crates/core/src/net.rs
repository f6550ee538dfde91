//! Assembles layers into a chain over a named-blob registry, runs forward /
//! backward, and exposes the learnable blobs to the solver. Orchestration is
//! single-threaded; parallelism lives inside the layer kernels.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::blob::Blob;
use crate::data::Dataset;
use crate::engine::{Engine, Policy};
use crate::error::{Error, Result};
use crate::layers::{
    AccuracyParams, BatchCtx, ConvLayer, ConvParams, IpLayer, IpParams, Layer, PoolLayer,
    PoolParams, ReluLayer, ReluParams, SoftmaxLayer, SoftmaxLossLayer,
};
use crate::rng::Pcg32;
use crate::snapshot;
use crate::tensor::Shape;

/// Configuration of one chain element, as parsed from a net file.
#[derive(Clone, Debug)]
pub enum LayerConfig {
    Data {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv(ConvParams),
    Pool(PoolParams),
    Ip(IpParams),
    Relu(ReluParams),
    Softmax,
    SoftmaxLoss {
        loss_weight: f32,
    },
    Accuracy(AccuracyParams),
}

#[derive(Clone, Debug)]
pub struct LayerDef {
    pub name: String,
    pub bottom: Option<String>,
    pub top: Option<String>,
    pub config: LayerConfig,
}

/// Ordered chain description: blob names connect consecutive layers.
#[derive(Clone, Debug, Default)]
pub struct NetSpec {
    pub layers: Vec<LayerDef>,
}

impl NetSpec {
    /// Input dims (C, H, W) declared by the data layer.
    pub fn input_dims(&self) -> Result<(usize, usize, usize)> {
        match self.layers.first().map(|l| &l.config) {
            Some(LayerConfig::Data {
                channels,
                height,
                width,
            }) => Ok((*channels, *height, *width)),
            _ => Err(Error::Config(
                "net must start with a data layer declaring channels/height/width".into(),
            )),
        }
    }
}

struct Binding {
    layer: Box<dyn Layer>,
    bottom: usize,
    top: usize,
    in_place: bool,
}

/// A built network: preallocated blobs plus the executor chain.
pub struct Net {
    engine: Engine,
    blobs: Vec<Blob>,
    blob_names: Vec<String>,
    bindings: Vec<Binding>,
    batch: usize,
    input_dims: (usize, usize, usize),
    data_blob: usize,
    loss_binding: Option<usize>,
    metric_blob: usize,
    top_k: usize,
    labels: Vec<usize>,
    forward_times: Vec<Duration>,
    backward_times: Vec<Duration>,
    trace: Option<Vec<String>>,
}

fn two_mut<T>(xs: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b, "aliasing blob access");
    if a < b {
        let (lo, hi) = xs.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = xs.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

impl Net {
    /// Allocates every blob with inferred shapes and initializes the
    /// learnable blobs from `seed`.
    pub fn build(spec: &NetSpec, batch: usize, seed: u64) -> Result<Net> {
        if batch == 0 {
            return Err(Error::InvalidInput("batch must be >= 1".into()));
        }
        let (c, h, w) = spec.input_dims()?;
        let data_name = spec.layers[0]
            .top
            .clone()
            .ok_or_else(|| Error::Config("data layer needs a top name".into()))?;

        let mut rng = Pcg32::new(seed, 0);
        let mut blobs = vec![Blob::new(Shape::new(&[batch, c, h, w])?)];
        let mut blob_names = vec![data_name.clone()];
        let mut by_name: HashMap<String, usize> = HashMap::new();
        by_name.insert(data_name, 0);

        let mut bindings = Vec::new();
        let mut loss_binding = None;
        let mut metric_blob = None;
        let mut top_k = 1;

        for def in &spec.layers[1..] {
            let bottom_name = def.bottom.as_deref().ok_or_else(|| {
                Error::Config(format!("layer '{}' is missing a bottom blob", def.name))
            })?;
            let bottom = *by_name.get(bottom_name).ok_or_else(|| {
                Error::Config(format!(
                    "layer '{}' references undefined blob '{bottom_name}'",
                    def.name
                ))
            })?;

            let mut layer: Box<dyn Layer> = match &def.config {
                LayerConfig::Data { .. } => {
                    return Err(Error::Config(format!(
                        "second data layer '{}' not supported",
                        def.name
                    )))
                }
                LayerConfig::Accuracy(p) => {
                    // Not a real layer: it only selects the metric source.
                    if p.top_k == 0 {
                        return Err(Error::Config("accuracy top_k must be >= 1".into()));
                    }
                    top_k = p.top_k;
                    metric_blob = Some(bottom);
                    continue;
                }
                LayerConfig::Conv(p) => Box::new(ConvLayer::new(&def.name, *p)),
                LayerConfig::Pool(p) => Box::new(PoolLayer::new(&def.name, *p)),
                LayerConfig::Ip(p) => Box::new(IpLayer::new(&def.name, *p)),
                LayerConfig::Relu(p) => Box::new(ReluLayer::new(&def.name, *p)),
                LayerConfig::Softmax => Box::new(SoftmaxLayer::new(&def.name)),
                LayerConfig::SoftmaxLoss { loss_weight } => {
                    Box::new(SoftmaxLossLayer::new(&def.name, *loss_weight))
                }
            };

            let bottom_shape = blobs[bottom].shape().clone();
            layer.setup(&bottom_shape, &mut rng)?;

            let in_place = layer.supports_in_place();
            let top = if in_place {
                // The top name (when distinct) becomes an alias of the
                // bottom blob; "pool1 -> relu -> pool1" and
                // "pool1 -> relu -> relu1" both run in place.
                if let Some(top_name) = &def.top {
                    match by_name.get(top_name) {
                        None => {
                            by_name.insert(top_name.clone(), bottom);
                        }
                        Some(&idx) if idx == bottom => {}
                        Some(_) => {
                            return Err(Error::Config(format!(
                                "in-place layer '{}' cannot write to existing blob '{top_name}'",
                                def.name
                            )))
                        }
                    }
                }
                bottom
            } else {
                let top_name = def.top.clone().ok_or_else(|| {
                    Error::Config(format!("layer '{}' is missing a top blob", def.name))
                })?;
                if by_name.contains_key(&top_name) {
                    return Err(Error::Config(format!(
                        "blob '{top_name}' defined twice (layer '{}')",
                        def.name
                    )));
                }
                let shape = layer.top_shape(&bottom_shape)?;
                blobs.push(Blob::new(shape));
                blob_names.push(top_name.clone());
                let idx = blobs.len() - 1;
                by_name.insert(top_name, idx);
                idx
            };

            if layer.kind() == "softmax_loss" {
                loss_binding = Some(bindings.len());
                if metric_blob.is_none() {
                    metric_blob = Some(bottom);
                }
            }
            bindings.push(Binding {
                layer,
                bottom,
                top,
                in_place,
            });
        }

        let last_top = bindings.last().map(|b| b.top).unwrap_or(0);
        Ok(Net {
            engine: Engine::sequential(),
            blobs,
            blob_names,
            bindings,
            batch,
            input_dims: (c, h, w),
            data_blob: 0,
            loss_binding,
            metric_blob: metric_blob.unwrap_or(last_top),
            top_k,
            labels: Vec::new(),
            forward_times: Vec::new(),
            backward_times: Vec::new(),
            trace: None,
        })
    }

    pub fn set_policy(&mut self, policy: Policy) {
        self.engine.set_policy(policy);
    }

    pub fn policy(&self) -> Policy {
        self.engine.policy()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input_dims
    }

    pub fn sample_len(&self) -> usize {
        let (c, h, w) = self.input_dims;
        c * h * w
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn has_loss(&self) -> bool {
        self.loss_binding.is_some()
    }

    /// Class count as seen by the metric blob (logits features).
    pub fn class_count(&self) -> usize {
        let blob = &self.blobs[self.metric_blob];
        blob.count() / blob.shape().dim(0)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.bindings.iter().map(|b| b.layer.name()).collect()
    }

    pub fn blob_names(&self) -> &[String] {
        &self.blob_names
    }

    /// Records layer call order into an internal trace when enabled.
    pub fn set_tracing(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// One forward pass over a copied-in batch; returns the loss (0.0 for
    /// nets without a loss layer).
    pub fn forward(&mut self, images: &[f32], labels: Option<&[usize]>) -> Result<f32> {
        let want = self.batch * self.sample_len();
        if images.len() != want {
            return Err(Error::InvalidInput(format!(
                "batch payload must hold {want} floats, got {}",
                images.len()
            )));
        }
        self.blobs[self.data_blob]
            .data_mut()
            .data_mut()
            .copy_from_slice(images);
        self.labels.clear();
        if let Some(l) = labels {
            if l.len() != self.batch {
                return Err(Error::InvalidInput(format!(
                    "{} labels for a batch of {}",
                    l.len(),
                    self.batch
                )));
            }
            self.labels.extend_from_slice(l);
        }

        let eng = self.engine;
        let ctx = BatchCtx {
            labels: if self.labels.is_empty() {
                None
            } else {
                Some(&self.labels)
            },
        };
        self.forward_times.clear();
        for binding in &mut self.bindings {
            let started = Instant::now();
            if binding.in_place {
                binding
                    .layer
                    .forward_in_place(&eng, &mut self.blobs[binding.top], &ctx)?;
            } else {
                let (bottom, top) = two_mut(&mut self.blobs, binding.bottom, binding.top);
                binding.layer.forward(&eng, bottom, top, &ctx)?;
            }
            self.forward_times.push(started.elapsed());
            if let Some(trace) = &mut self.trace {
                trace.push(format!("forward:{}", binding.layer.name()));
            }
        }
        Ok(self
            .loss_binding
            .and_then(|i| self.bindings[i].layer.loss())
            .unwrap_or(0.0))
    }

    /// One backward pass in reverse layer order. Parameter diffs accumulate;
    /// call [`zero_param_diffs`](Net::zero_param_diffs) at step start.
    pub fn backward(&mut self) -> Result<()> {
        let eng = self.engine;
        let ctx = BatchCtx {
            labels: if self.labels.is_empty() {
                None
            } else {
                Some(&self.labels)
            },
        };
        self.backward_times.clear();
        for binding in self.bindings.iter_mut().rev() {
            let started = Instant::now();
            if binding.in_place {
                binding
                    .layer
                    .backward_in_place(&eng, &mut self.blobs[binding.top], &ctx)?;
            } else {
                let (bottom, top) = two_mut(&mut self.blobs, binding.bottom, binding.top);
                binding.layer.backward(&eng, top, bottom, &ctx)?;
            }
            self.backward_times.push(started.elapsed());
            if let Some(trace) = &mut self.trace {
                trace.push(format!("backward:{}", binding.layer.name()));
            }
        }
        // reverse so index i matches layer i
        self.backward_times.reverse();
        Ok(())
    }

    /// Per-layer wall times of the last forward / backward pass.
    pub fn layer_times(&self) -> (&[Duration], &[Duration]) {
        (&self.forward_times, &self.backward_times)
    }

    /// Blob feeding the metric (accuracy) source, normally the logits.
    pub fn metric_blob(&self) -> &Blob {
        &self.blobs[self.metric_blob]
    }

    /// Top-k accuracy of the last forward pass against `labels`.
    pub fn accuracy_of_batch(&self, labels: &[usize]) -> Result<f32> {
        let blob = self.metric_blob();
        let m = blob.shape().dim(0);
        let d = blob.count() / m;
        let view = blob.data_as_matrix(m, d, false)?;
        crate::layers::accuracy(&view, labels, self.top_k)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Blob> {
        self.bindings
            .iter_mut()
            .flat_map(|b| b.layer.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Blob> {
        self.bindings.iter().flat_map(|b| b.layer.params()).collect()
    }

    pub fn zero_param_diffs(&mut self) {
        for blob in self.params_mut() {
            blob.zero_diff();
        }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let tensors: Vec<_> = self.params().into_iter().map(|b| b.data()).collect();
        snapshot::save_tensors(path, &tensors)
    }

    pub fn load_snapshot(&mut self, path: &Path) -> Result<()> {
        let tensors = snapshot::load_tensors(path)?;
        let mut params = self.params_mut();
        if tensors.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "snapshot holds {} blobs, net has {} learnables",
                tensors.len(),
                params.len()
            )));
        }
        for (tensor, blob) in tensors.into_iter().zip(params.iter_mut()) {
            if tensor.shape() != blob.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "snapshot blob {:?} vs net blob {:?}",
                    tensor.shape().dims(),
                    blob.shape().dims()
                )));
            }
            blob.data_mut().data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }

    /// Mean loss and accuracy over the first `batches` full batches of `ds`,
    /// read sequentially (no shuffling). Same code path as training-time
    /// evaluation so the numbers match bitwise.
    pub fn evaluate(&mut self, ds: &Dataset, batches: usize) -> Result<(f32, f32)> {
        if batches == 0 {
            return Err(Error::InvalidInput("evaluate needs at least one batch".into()));
        }
        if batches * self.batch > ds.len() {
            return Err(Error::InvalidInput(format!(
                "{batches} batches of {} exceed dataset of {}",
                self.batch,
                ds.len()
            )));
        }
        let mut images = vec![0.0f32; self.batch * self.sample_len()];
        let mut labels = Vec::with_capacity(self.batch);
        let mut loss_sum = 0.0f32;
        let mut acc_sum = 0.0f32;
        for b in 0..batches {
            ds.fill_range(b * self.batch, self.batch, &mut images, &mut labels)?;
            loss_sum += self.forward(&images, Some(&labels))?;
            acc_sum += self.accuracy_of_batch(&labels)?;
        }
        Ok((loss_sum / batches as f32, acc_sum / batches as f32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::PoolMethod;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            layers: vec![
                LayerDef {
                    name: "input".into(),
                    bottom: None,
                    top: Some("data".into()),
                    config: LayerConfig::Data {
                        channels: 1,
                        height: 6,
                        width: 6,
                    },
                },
                LayerDef {
                    name: "conv1".into(),
                    bottom: Some("data".into()),
                    top: Some("conv1".into()),
                    config: LayerConfig::Conv(ConvParams::square(2, 3, 1, 0)),
                },
                LayerDef {
                    name: "pool1".into(),
                    bottom: Some("conv1".into()),
                    top: Some("pool1".into()),
                    config: LayerConfig::Pool(PoolParams::square(PoolMethod::Max, 2, 2, 0)),
                },
                LayerDef {
                    name: "relu1".into(),
                    bottom: Some("pool1".into()),
                    top: Some("pool1".into()),
                    config: LayerConfig::Relu(ReluParams::default()),
                },
                LayerDef {
                    name: "ip1".into(),
                    bottom: Some("pool1".into()),
                    top: Some("ip1".into()),
                    config: LayerConfig::Ip(IpParams {
                        num_output: 3,
                        bias: true,
                        transpose: false,
                    }),
                },
                LayerDef {
                    name: "loss".into(),
                    bottom: Some("ip1".into()),
                    top: Some("loss".into()),
                    config: LayerConfig::SoftmaxLoss { loss_weight: 1.0 },
                },
            ],
        }
    }

    #[test]
    fn build_allocates_inferred_shapes() {
        let net = Net::build(&tiny_spec(), 4, 1).unwrap();
        assert_eq!(net.layer_names(), vec!["conv1", "pool1", "relu1", "ip1", "loss"]);
        // conv: 6 -> 4, pool: 4 -> 2
        let names = net.blob_names().to_vec();
        assert!(names.contains(&"conv1".to_string()));
        assert_eq!(net.blobs[1].shape().dims(), &[4, 2, 4, 4]);
        assert_eq!(net.blobs[2].shape().dims(), &[4, 2, 2, 2]);
        // learnables: conv w+b, ip w+b
        assert_eq!(net.params().len(), 4);
    }

    #[test]
    fn dangling_blob_is_an_error() {
        let mut spec = tiny_spec();
        spec.layers[1].bottom = Some("nope".into());
        let err = match Net::build(&spec, 2, 1) {
            Err(e) => e,
            Ok(_) => panic!("dangling blob accepted"),
        };
        assert!(format!("{err}").contains("undefined blob"));
    }

    #[test]
    fn duplicate_top_is_an_error() {
        let mut spec = tiny_spec();
        spec.layers[4].top = Some("conv1".into());
        assert!(Net::build(&spec, 2, 1).is_err());
    }

    #[test]
    fn forward_and_backward_run_in_order() {
        let mut net = Net::build(&tiny_spec(), 2, 7).unwrap();
        net.set_tracing(true);
        let images = vec![0.1f32; 2 * 36];
        let labels = vec![0usize, 2];
        net.forward(&images, Some(&labels)).unwrap();
        net.backward().unwrap();
        let trace = net.take_trace();
        let expect: Vec<String> = ["conv1", "pool1", "relu1", "ip1", "loss"]
            .iter()
            .map(|n| format!("forward:{n}"))
            .chain(
                ["loss", "ip1", "relu1", "pool1", "conv1"]
                    .iter()
                    .map(|n| format!("backward:{n}")),
            )
            .collect();
        assert_eq!(trace, expect);
    }

    #[test]
    fn untrained_loss_near_ln_classes() {
        // Desk-scale check; the MNIST-size net is held to ln(10) +- 0.1 in
        // the acceptance suite, where the fan-in keeps init logits tiny.
        let mut net = Net::build(&tiny_spec(), 4, 3).unwrap();
        let mut rng = Pcg32::new(2, 0);
        let images: Vec<f32> = (0..4 * 36).map(|_| rng.uniform(0.0, 0.2)).collect();
        let labels = vec![0usize, 1, 2, 0];
        let loss = net.forward(&images, Some(&labels)).unwrap();
        assert!((loss - 3.0f32.ln()).abs() <= 0.2, "loss {loss}");
    }

    #[test]
    fn repeat_forward_is_bitwise_stable() {
        let mut net = Net::build(&tiny_spec(), 2, 9).unwrap();
        let mut rng = Pcg32::new(4, 0);
        let images: Vec<f32> = (0..2 * 36).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels = vec![1usize, 2];
        let a = net.forward(&images, Some(&labels)).unwrap();
        let b = net.forward(&images, Some(&labels)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn batch_size_mismatch_rejected() {
        let mut net = Net::build(&tiny_spec(), 2, 1).unwrap();
        assert!(net.forward(&[0.0; 10], None).is_err());
    }
}
