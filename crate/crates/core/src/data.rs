//! Dataset ingestion: IDX files (MNIST, Fashion-MNIST) and synthetic
//! Gaussian blobs for fast tests.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major `N x dim` inputs with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f32>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f32>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "{} input values do not form {} rows of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    /// Copies the given samples into a new dataset with the same class count.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("index {i} beyond dataset of {}", self.len())));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(inputs, labels, self.dim, self.num_classes)
    }

    /// Indices of every sample, grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            pools[l].push(i);
        }
        pools
    }
}

/// Reads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Loads `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte` from `dir`,
/// with `prefix` either `train` or `t10k`.
pub fn load_idx_dir(dir: impl AsRef<Path>, prefix: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (rows, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != rows {
        return Err(Error::Format(format!(
            "{rows} images but {} labels",
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let dim = pixels.len().checked_div(rows).unwrap_or(1);
    Dataset::new(pixels, labels, dim, num_classes)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "image payload has {} bytes, header announces {expected}",
            payload.len()
        )));
    }
    Ok((count, payload.iter().map(|&b| f32::from(b) / 255.0).collect()))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "label payload has {} bytes, header announces {count}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

/// Gaussian clusters, one per class, with means drawn on a scaled simplex-like
/// lattice so that classes are separated by at least unit distance.
pub fn synth_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f32, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::argument("synth_blobs sizes must be positive"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::argument("spread must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
    let means: Vec<Vec<f32>> = (0..num_classes)
        .map(|c| {
            let mut m: Vec<f32> = (0..dim).map(|_| 0.5 * unit.sample(&mut rng)).collect();
            m[c % dim] += 2.0;
            m
        })
        .collect();
    let mut inputs = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            inputs.extend(mean.iter().map(|&mu| mu + spread * unit.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, dim, num_classes)
}

#[cfg(test)]
pub(crate) fn idx_fixture(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend((images.len() as u32).to_be_bytes());
    img.extend(rows.to_be_bytes());
    img.extend(cols.to_be_bytes());
    for im in images {
        img.extend(im);
    }
    let mut lab = Vec::new();
    lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    (img, lab)
}
