//! Dataset loading and batch iteration.
//!
//! Loaders parse the standard binary layouts directly: IDX image/label
//! pairs, CIFAR-10 batch files (1 label byte + 3072 pixel bytes per record),
//! and CIFAR-100 train/test files (coarse + fine label bytes, fine labels
//! used). Pixels are normalized to [0, 1]. Validation errors name the file
//! and the byte offset where parsing failed.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetName {
    pub fn parse(name: &str) -> Result<DatasetName> {
        match name {
            "mnist" => Ok(DatasetName::Mnist),
            "cifar10" => Ok(DatasetName::Cifar10),
            "cifar100" => Ok(DatasetName::Cifar100),
            other => Err(Error::config(format!(
                "unknown dataset '{}'; expected mnist, cifar10, or cifar100",
                other
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetName::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetName::Mnist => (1, 28, 28),
            _ => (3, 32, 32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An in-memory image classification dataset, pixels in [0, 1].
#[derive(Debug)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    /// `[n, c, h, w]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.name.num_classes()
    }

    /// Keep only the first `n` examples (file order). No-op if `n` is 0 or
    /// already covers the dataset.
    pub fn truncate(&mut self, n: usize) {
        if n == 0 || n >= self.len() {
            return;
        }
        let sample: usize = self.images.shape[1..].iter().product();
        self.images.data.truncate(n * sample);
        self.images.shape[0] = n;
        self.labels.truncate(n);
    }

    /// Copy the examples at `indices` into a fresh batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let sample: usize = self.images.shape[1..].iter().product();
        let mut shape = self.images.shape.clone();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!(
                    "gather index {} out of range for {} examples",
                    i,
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor { shape, data }, labels))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    if offset + 4 > bytes.len() {
        return Err(Error::format(format!(
            "{}: truncated at offset {}",
            path.display(),
            offset
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap()))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Parse an IDX image file: big-endian magic 2051, count, rows, cols, then
/// one unsigned byte per pixel.
fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(format!(
            "{}: bad image magic {:#010x} at offset 0, expected {:#010x}",
            path.display(),
            magic,
            IDX_IMAGE_MAGIC
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{}: expected {} bytes for {} images of {}x{}, found {}",
            path.display(),
            expected,
            n,
            rows,
            cols,
            bytes.len()
        )));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Parse an IDX label file: big-endian magic 2049, count, then one byte per
/// label.
fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "{}: bad label magic {:#010x} at offset 0, expected {:#010x}",
            path.display(),
            magic,
            IDX_LABEL_MAGIC
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(format!(
            "{}: expected {} bytes for {} labels, found {}",
            path.display(),
            8 + n,
            n,
            bytes.len()
        )));
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let (img_name, lbl_name) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let (n, rows, cols, pixels) = read_idx_images(&dir.join(img_name))?;
    let labels = read_idx_labels(&dir.join(lbl_name))?;
    if labels.len() != n {
        return Err(Error::format(format!(
            "{}: {} labels for {} images",
            dir.join(lbl_name).display(),
            labels.len(),
            n
        )));
    }
    if rows != 28 || cols != 28 {
        return Err(Error::format(format!(
            "{}: expected 28x28 images, got {}x{}",
            dir.join(img_name).display(),
            rows,
            cols
        )));
    }
    Ok(Dataset {
        name: DatasetName::Mnist,
        split,
        images: Tensor {
            shape: vec![n, 1, rows, cols],
            data: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        },
        labels: labels.iter().map(|&l| l as usize).collect(),
    })
}

/// Read one CIFAR-style binary file. `label_bytes` is 1 for CIFAR-10 and 2
/// for CIFAR-100 (coarse then fine; the last label byte is the one kept).
fn read_cifar_file(
    path: &Path,
    label_bytes: usize,
    num_classes: usize,
    images: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let bytes = read_file(path)?;
    let record = label_bytes + 3072;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::format(format!(
            "{}: length {} is not a multiple of the {}-byte record size",
            path.display(),
            bytes.len(),
            record
        )));
    }
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::format(format!(
                "{}: label {} out of range at record {} (offset {})",
                path.display(),
                label,
                i,
                i * record
            )));
        }
        labels.push(label);
        images.extend(rec[label_bytes..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(())
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{}.bin", i)).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        read_cifar_file(&dir.join(f), 1, 10, &mut images, &mut labels)?;
    }
    Ok(Dataset {
        name: DatasetName::Cifar10,
        split,
        images: Tensor {
            shape: vec![labels.len(), 3, 32, 32],
            data: images,
        },
        labels,
    })
}

pub fn load_cifar100(dir: &Path, split: Split) -> Result<Dataset> {
    let file = match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    read_cifar_file(&dir.join(file), 2, 100, &mut images, &mut labels)?;
    Ok(Dataset {
        name: DatasetName::Cifar100,
        split,
        images: Tensor {
            shape: vec![labels.len(), 3, 32, 32],
            data: images,
        },
        labels,
    })
}

pub fn load_dataset(name: DatasetName, dir: &Path, split: Split) -> Result<Dataset> {
    match name {
        DatasetName::Mnist => load_mnist(dir, split),
        DatasetName::Cifar10 => load_cifar10(dir, split),
        DatasetName::Cifar100 => load_cifar100(dir, split),
    }
}

/// A shuffled pass over `n` examples in fixed-size batches. The trailing
/// partial batch is dropped.
pub struct BatchPlan {
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    /// Shuffle order is a pure function of (seed, epoch).
    pub fn new(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<BatchPlan> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::contract(format!(
                "batch size {} invalid for {} examples",
                batch_size, n
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(seed, "batch-order", epoch as u64).shuffle(&mut order);
        Ok(BatchPlan { order, batch_size })
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks_exact(self.batch_size)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

/// First `m` indices of a dedicated shuffle, used as the fixed probe batch
/// for estimation across all epochs of a run.
pub fn probe_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "probe batch size {} invalid for {} examples",
            m, n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, "probe-batch", 0).shuffle(&mut order);
    order.truncate(m);
    Ok(order)
}
