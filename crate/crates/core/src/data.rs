//! Dataset ingestion (IDX, CIFAR-10 binary, synthetic blobs) and
//! deterministic minibatching. No augmentation is ever applied.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Real, Tensor};
use crate::error::{Error, Result};
use crate::seed::{self, SeedLineage, StreamRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 3073;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub name: String,
    pub split: Split,
    /// `[n, c, h, w]`
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(name: &str, split: Split, images: Tensor<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "dataset `{name}`: {} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "dataset `{name}`: label {l} outside [0, {class_count})"
            )));
        }
        Ok(Dataset { name: name.into(), split, images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape, e.g. `[1, 28, 28]`.
    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn example_len(&self) -> usize {
        self.example_shape().iter().product()
    }

    pub fn example(&self, i: usize) -> &[T] {
        let l = self.example_len();
        &self.images.data()[i * l..(i + 1) * l]
    }

    /// View every example with a different per-example shape of the same size.
    pub fn reshape_examples(mut self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        self.images = self.images.reshape(full)?;
        Ok(self)
    }

    /// Copy a subset of rows into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let l = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * l);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }

    fn slice(&self, range: std::ops::Range<usize>, split: Split) -> Result<Self> {
        let idx: Vec<usize> = range.collect();
        let (images, labels) = self.gather(&idx)?;
        Dataset::new(&self.name, split, images, labels, self.class_count)
    }

    /// Hold out the last `fraction` of examples (file order, unshuffled) as
    /// the validation split.
    pub fn split_validation(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::InvalidArgument(format!("validation fraction {fraction} not in (0,1)")));
        }
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot hold out {n_val} of {} examples",
                self.len()
            )));
        }
        let cut = self.len() - n_val;
        Ok((self.slice(0..cut, Split::Train)?, self.slice(cut..self.len(), Split::Val)?))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format { path: path.into(), detail: "truncated IDX header".into() })
}

fn scale<T: Real>(b: u8) -> T {
    T::from_f64(b as f64) / T::from_f64(255.0)
}

/// Parse an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixel byte `b` becomes `b / 255`.
pub fn load_idx<T: Real>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;
    let fmt = |path: &Path, detail: String| Error::Format { path: path.into(), detail };

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt(images_path, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let expected = 16 + n * rows * cols;
    if img.len() != expected {
        return Err(fmt(images_path, format!("header promises {expected} bytes, file has {}", img.len())));
    }

    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt(labels_path, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if lab.len() != 8 + n_labels {
        return Err(fmt(labels_path, format!("header promises {} bytes, file has {}", 8 + n_labels, lab.len())));
    }
    if n_labels != n {
        return Err(fmt(labels_path, format!("{n_labels} labels for {n} images")));
    }
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    let pixels = img[16..].iter().map(|&b| scale::<T>(b)).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    let name = images_path.file_name().and_then(|s| s.to_str()).unwrap_or("idx");
    Dataset::new(name, Split::Train, images, labels, class_count)
}

/// Parse one or more CIFAR-10 binary batch files (3073-byte records:
/// label, then 1024 R, 1024 G, 1024 B bytes).
pub fn load_cifar10<T: Real>(batch_files: &[&Path]) -> Result<Dataset<T>> {
    if batch_files.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR-10 batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for &path in batch_files {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format {
                path: path.into(),
                detail: format!("size {} is not a positive multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            if rec[0] > 9 {
                return Err(Error::Format { path: path.into(), detail: format!("label {} > 9", rec[0]) });
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| scale::<T>(b)));
        }
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 3, 32, 32], pixels)?;
    Dataset::new("cifar10", Split::Train, images, labels, 10)
}

/// Parameters of the synthetic Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_count: usize,
    pub n_per_class: usize,
    pub dim: usize,
    /// Noise standard deviation; class means differ by 1.0 on their own
    /// coordinates.
    pub noise_std: f64,
}

impl BlobSpec {
    pub fn new(class_count: usize, n_per_class: usize, dim: usize) -> Self {
        BlobSpec { class_count, n_per_class, dim, noise_std: 0.1 }
    }
}

/// Gaussian clusters with unit-separated means and the default noise
/// (σ = 0.1, i.e. means 10σ apart). See [`synth_blobs_with`].
pub fn synth_blobs<T: Real>(class_count: usize, n_per_class: usize, dim: usize, seed: u64) -> Result<Dataset<T>> {
    synth_blobs_with(&BlobSpec::new(class_count, n_per_class, dim), seed)
}

/// Class `c` has mean 1.0 on coordinates `d` with `d % class_count == c` and
/// 0.0 elsewhere; samples add `N(0, noise_std²)` noise and are clamped to
/// `[0, 1]`. Examples are interleaved by class, so any contiguous tail
/// contains every class. Images have shape `[n, 1, 1, dim]`.
pub fn synth_blobs_with<T: Real>(spec: &BlobSpec, seed: u64) -> Result<Dataset<T>> {
    if spec.class_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic blobs need at least 2 classes, got {}",
            spec.class_count
        )));
    }
    if spec.n_per_class == 0 || spec.dim < spec.class_count {
        return Err(Error::InvalidArgument(format!(
            "need n_per_class > 0 and dim >= class_count, got {spec:?}"
        )));
    }
    let normal = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;
    let mut rng = SeedLineage::new(seed, 0).stream(seed::DATA);
    let n = spec.class_count * spec.n_per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.class_count;
        for d in 0..spec.dim {
            let mean = if d % spec.class_count == c { 1.0 } else { 0.0 };
            let v: f64 = mean + normal.sample(&mut rng);
            data.push(T::from_f64(v.clamp(0.0, 1.0)));
        }
        labels.push(c);
    }
    let images = Tensor::new(vec![n, 1, 1, spec.dim], data)?;
    Dataset::new("synth_blobs", Split::Train, images, labels, spec.class_count)
}

/// Per-channel mean / standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit<T: Real>(ds: &Dataset<T>) -> Self {
        let c = ds.example_shape()[0];
        let plane = ds.example_len() / c;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..ds.len() {
            for (ch, chunk) in ds.example(i).chunks_exact(plane).enumerate() {
                for &v in chunk {
                    let v = v.as_f64();
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (ds.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-12))
            .collect();
        ChannelStats { mean, std }
    }

    pub fn apply<T: Real>(&self, ds: &mut Dataset<T>) {
        let c = ds.example_shape()[0];
        let plane = ds.example_len() / c;
        for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = T::from_f64((v.as_f64() - self.mean[ch]) / self.std[ch]);
        }
    }
}

/// Deterministic epoch iterator over minibatches of example indices.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    position: usize,
    rng: StreamRng,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, rng: StreamRng) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument("batch stream needs n > 0 and batch_size > 0".into()));
        }
        let mut s = BatchStream { n, batch_size, order: (0..n).collect(), position: n, rng };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order.clear();
        self.order.extend(0..self.n);
        self.order.shuffle(&mut self.rng);
        self.position = 0;
    }

    /// Index batches of the next epoch; the last batch may be short.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        if self.position >= self.n {
            self.reshuffle();
        }
        let batches = self.order[self.position..].chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        self.position = self.n;
        batches
    }

    /// One batch, continuing through the current permutation.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.position >= self.n {
            self.reshuffle();
        }
        let end = (self.position + self.batch_size).min(self.n);
        let b = self.order[self.position..end].to_vec();
        self.position = end;
        b
    }
}
