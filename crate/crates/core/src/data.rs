//! Datasets: IDX (MNIST) files, synthetic Gaussian blobs, and seeded batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    UnitInterval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N × C × H × W` or `N × D`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::CountMismatch { images: images.batch(), labels: labels.len() });
        }
        let normalization = if images.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            Normalization::UnitInterval
        } else {
            Normalization::Raw
        };
        Ok(Self { images, labels, name: name.into(), normalization })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.images.sample_shape()
    }

    /// Reinterprets each sample with a new per-sample shape of equal size.
    pub fn reshape_samples(self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Self { images: self.images.reshape(full)?, ..self })
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
            normalization: self.normalization,
        }
    }

    /// First `n` samples after a seeded shuffle.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        Ok(self.select(&shuffled_indices(self.len(), n, seed)?))
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: offset + 4, found: bytes.len() })
}

/// Parses an IDX image file: magic, count, rows, cols, then `u8` pixels scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let data = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic { expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    Ok(bytes[8..expected].iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&fs::read(labels_path.as_ref())?)?;
    let name = images_path
        .as_ref()
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(images, labels, name)
}

/// Encodes images as IDX bytes. Pixels are rounded to the nearest multiple of 1/255.
pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let sample = images.sample_shape();
    let (rows, cols) = match *sample {
        [1, r, c] | [r, c] => (r, c),
        [d] => (1, d),
        _ => return Err(Error::domain(format!("cannot encode sample shape {sample:?} as IDX images"))),
    };
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, images.batch() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::domain(format!("label {l} does not fit in a byte")))?);
    }
    Ok(out)
}

pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    fs::write(images_path, encode_idx_images(&ds.images)?)?;
    fs::write(labels_path, encode_idx_labels(&ds.labels)?)?;
    Ok(())
}

/// Gaussian clusters around per-class centers drawn from `[0.2, 0.8]^dim`, clipped to `[0,1]`.
/// Sample `i` belongs to class `i % classes`.
pub fn synth_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::domain("blobs need at least two classes"));
    }
    if dim == 0 || per_class == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::domain("blobs need positive dim and per_class and a finite spread"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &centers[c] {
            data.push((mu + spread * noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, format!("blobs-{classes}x{per_class}-d{dim}"))
}

fn shuffled_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::domain(format!("requested {n} samples from a dataset of {len}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Seeded iterator over minibatches of a shuffled subset; the last partial batch is kept.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(Batch {
            images: self.ds.images.select(idx),
            labels: idx.iter().map(|&i| self.ds.labels[i]).collect(),
        })
    }
}

pub fn subset_and_batch(ds: &Dataset, n: usize, batch_size: usize, seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::domain("batch size must be positive"));
    }
    Ok(Batches { ds, order: shuffled_indices(ds.len(), n, seed)?, batch_size, pos: 0 })
}
