//! Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches, plus the
//! deterministic epoch batcher. Raw files only, no database backends.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 32 * 32 pixels
const CIFAR_PIXELS: usize = 3072;

/// Normalized images (N x C x H x W) with class labels.
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let dims = images.shape().dims();
        if dims.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "dataset images must be N x C x H x W, got {dims:?}"
            )));
        }
        if dims[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images vs {} labels",
                dims[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        let d = self.images.shape().dims();
        (d[1], d[2], d[3])
    }

    pub fn sample_len(&self) -> usize {
        let (c, h, w) = self.image_dims();
        c * h * w
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copy the samples at `indices` into a batch buffer.
    pub fn fill_indices(
        &self,
        indices: &[usize],
        images: &mut [f32],
        labels: &mut Vec<usize>,
    ) -> Result<()> {
        let sample = self.sample_len();
        if images.len() != indices.len() * sample {
            return Err(Error::ShapeMismatch(format!(
                "batch buffer {} vs {} samples of {}",
                images.len(),
                indices.len(),
                sample
            )));
        }
        labels.clear();
        let src = self.images.data();
        for (slot, &idx) in images.chunks_mut(sample).zip(indices) {
            if idx >= self.len() {
                return Err(Error::InvalidInput(format!("sample index {idx} out of range")));
            }
            slot.copy_from_slice(&src[idx * sample..(idx + 1) * sample]);
            labels.push(self.labels[idx]);
        }
        Ok(())
    }

    /// Copy `count` consecutive samples starting at `start` (evaluation path).
    pub fn fill_range(
        &self,
        start: usize,
        count: usize,
        images: &mut [f32],
        labels: &mut Vec<usize>,
    ) -> Result<()> {
        if start + count > self.len() {
            return Err(Error::InvalidInput(format!(
                "range {start}..{} out of dataset of {}",
                start + count,
                self.len()
            )));
        }
        let sample = self.sample_len();
        if images.len() != count * sample {
            return Err(Error::ShapeMismatch("batch buffer size".into()));
        }
        let src = self.images.data();
        images.copy_from_slice(&src[start * sample..(start + count) * sample]);
        labels.clear();
        labels.extend_from_slice(&self.labels[start..start + count]);
        Ok(())
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format("truncated IDX header".into()));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// MNIST IDX pair. Headers are big-endian; pixels are scaled by 1/256.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let magic = be_u32(&image_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(&image_bytes, 4)? as usize;
    let rows = be_u32(&image_bytes, 8)? as usize;
    let cols = be_u32(&image_bytes, 12)? as usize;
    let payload = &image_bytes[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "image payload holds {} bytes, header implies {}",
            payload.len(),
            n * rows * cols
        )));
    }

    let magic = be_u32(&label_bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_n = be_u32(&label_bytes, 4)? as usize;
    if label_n != n {
        return Err(Error::Format(format!(
            "{n} images but {label_n} labels"
        )));
    }
    let label_payload = &label_bytes[8..];
    if label_payload.len() != n {
        return Err(Error::Format("truncated label payload".into()));
    }

    let data: Vec<f32> = payload.iter().map(|&b| b as f32 / 256.0).collect();
    let images = Tensor::from_vec(&[n, 1, rows, cols], data)?;
    let labels: Vec<usize> = label_payload.iter().map(|&b| b as usize).collect();
    Dataset::new(images, labels, 10)
}

/// CIFAR-10 binary batches: 3073-byte records, label byte then R, G, B
/// planes. Pixels are scaled by 1/256, then the per-pixel training mean is
/// subtracted (computed here when `mean` is None).
pub fn load_cifar10(
    batch_paths: &[impl AsRef<Path>],
    mean: Option<&Tensor>,
) -> Result<(Dataset, Tensor)> {
    if batch_paths.is_empty() {
        return Err(Error::InvalidInput("no CIFAR-10 batch files given".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path.as_ref())?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of {CIFAR_RECORD}",
                path.as_ref().display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0] as usize;
            if label > 9 {
                return Err(Error::Format(format!(
                    "{}: label byte {label} out of range",
                    path.as_ref().display()
                )));
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&b| b as f32 / 256.0));
        }
    }
    let n = labels.len();

    let mean_image = match mean {
        Some(m) => {
            if m.len() != CIFAR_PIXELS {
                return Err(Error::ShapeMismatch(format!(
                    "mean image must hold {CIFAR_PIXELS} values, got {}",
                    m.len()
                )));
            }
            m.clone()
        }
        None => {
            let mut acc = vec![0.0f64; CIFAR_PIXELS];
            for sample in data.chunks_exact(CIFAR_PIXELS) {
                for (a, &v) in acc.iter_mut().zip(sample) {
                    *a += v as f64;
                }
            }
            let inv = 1.0 / n as f64;
            Tensor::from_vec(
                &[3, 32, 32],
                acc.into_iter().map(|a| (a * inv) as f32).collect(),
            )?
        }
    };

    let mean_data = mean_image.data();
    for sample in data.chunks_exact_mut(CIFAR_PIXELS) {
        for (v, &m) in sample.iter_mut().zip(mean_data) {
            *v -= m;
        }
    }

    let images = Tensor::from_vec(&[n, 3, 32, 32], data)?;
    let ds = Dataset::new(images, labels, 10)?;
    Ok((ds, mean_image))
}

/// Deterministic training batcher: every epoch is a fresh seeded permutation
/// consumed in full consecutive slices; a trailing partial slice is dropped.
pub struct Batcher<'a> {
    ds: &'a Dataset,
    batch: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl<'a> Batcher<'a> {
    pub fn new(ds: &'a Dataset, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || batch > ds.len() {
            return Err(Error::InvalidInput(format!(
                "batch {batch} for dataset of {}",
                ds.len()
            )));
        }
        let mut batcher = Batcher {
            ds,
            batch,
            seed,
            epoch: 0,
            perm: Vec::new(),
            cursor: 0,
        };
        batcher.reshuffle();
        Ok(batcher)
    }

    fn reshuffle(&mut self) {
        self.perm = (0..self.ds.len()).collect();
        // stream = epoch: independent permutation per epoch, same seed
        let mut rng = Pcg32::new(self.seed, self.epoch);
        rng.shuffle(&mut self.perm);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Copy the next batch into the caller's buffers.
    pub fn next_batch(&mut self, images: &mut [f32], labels: &mut Vec<usize>) -> Result<()> {
        if self.cursor + self.batch > self.perm.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let idx = &self.perm[self.cursor..self.cursor + self.batch];
        self.ds.fill_indices(idx, images, labels)?;
        self.cursor += self.batch;
        Ok(())
    }
}
