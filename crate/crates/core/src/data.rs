//! Dataset ingestion: MNIST IDX binaries and the Cora content/cites text
//! files, plus a small synthetic generator for smoke tests.
//!
//! Loading is pure and file-order deterministic: running a loader twice on
//! the same bytes yields bit-identical datasets. Files may be supplied raw
//! or gzip-compressed (`<name>.gz`); decompression is transparent.

use crate::linalg::{Element, Matrix};
use crate::rng::SplitMix64;
use flate2::read::GzDecoder;
use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing dataset file; tried {tried:?}")]
    MissingFile { tried: Vec<PathBuf> },
    #[error("bad IDX magic {found:#010x} at byte offset 0 (expected 0x00000801 or 0x00000803)")]
    BadMagic { found: u32 },
    #[error("truncated IDX payload at byte offset {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("label value {label} outside {classes} classes")]
    LabelRange { label: u8, classes: usize },
    #[error("class {label:?} has only {available} nodes outside the test split, need {need}")]
    ClassTooSmall {
        label: String,
        available: usize,
        need: usize,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Tabular dataset: features, one-hot targets, and disjoint split masks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub x: Matrix<T>,
    pub y: Matrix<T>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl<T: Element> LabeledDataset<T> {
    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.y.cols()
    }

}

/// Number of set entries in a split mask.
pub fn mask_count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Graph dataset: node features and labels plus the undirected edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset<T> {
    pub data: LabeledDataset<T>,
    pub edges: Vec<(usize, usize)>,
    pub n: usize,
    /// Citation lines referencing unknown node ids, skipped at load.
    pub skipped_citations: usize,
}

/// Either dataset kind, as consumed by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset<T> {
    Tabular(LabeledDataset<T>),
    Graph(GraphDataset<T>),
}

impl<T: Element> Dataset<T> {
    pub fn labeled(&self) -> &LabeledDataset<T> {
        match self {
            Dataset::Tabular(d) => d,
            Dataset::Graph(g) => &g.data,
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self, Dataset::Graph(_))
    }
}

/// Read a file, decompressing transparently when it is gzip (by suffix or
/// by the 0x1f8b signature).
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    let gz = path.extension().map_or(false, |e| e == "gz")
        || (raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b);
    if !gz {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(&raw[..])
        .read_to_end(&mut out)
        .map_err(io_err)?;
    Ok(out)
}

/// Locate `<dir>/<name>` or `<dir>/<name>.gz` and read it.
fn read_dataset_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    for candidate in [&plain, &gz] {
        if candidate.exists() {
            return read_maybe_gz(candidate);
        }
    }
    Err(DataError::MissingFile {
        tried: vec![plain, gz],
    })
}

/// Parsed IDX payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData<T> {
    /// Images flattened to rows, scaled to [0, 1] by division by 255.
    Images(Matrix<T>),
    /// Raw label bytes.
    Labels(Vec<u8>),
}

const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            offset,
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an IDX blob: magic 0x00000801 (labels, one dimension) or
/// 0x00000803 (images, three dimensions), big-endian dimension fields, then
/// the raw byte payload.
pub fn parse_idx<T: Element>(bytes: &[u8]) -> Result<IdxData<T>> {
    let magic = read_be_u32(bytes, 0)?;
    match magic {
        IDX_MAGIC_LABELS => {
            let n = read_be_u32(bytes, 4)? as usize;
            let start = 8;
            if bytes.len() < start + n {
                return Err(DataError::Truncated {
                    offset: start,
                    expected: start + n,
                    actual: bytes.len(),
                });
            }
            Ok(IdxData::Labels(bytes[start..start + n].to_vec()))
        }
        IDX_MAGIC_IMAGES => {
            let n = read_be_u32(bytes, 4)? as usize;
            let rows = read_be_u32(bytes, 8)? as usize;
            let cols = read_be_u32(bytes, 12)? as usize;
            let start = 16;
            let pixels = n * rows * cols;
            if bytes.len() < start + pixels {
                return Err(DataError::Truncated {
                    offset: start,
                    expected: start + pixels,
                    actual: bytes.len(),
                });
            }
            let data = bytes[start..start + pixels]
                .iter()
                .map(|&b| T::from_f64(b as f64 / 255.0))
                .collect();
            Ok(IdxData::Images(
                Matrix::from_vec(n, rows * cols, data).expect("length computed above"),
            ))
        }
        other => Err(DataError::BadMagic { found: other }),
    }
}

/// One-hot encode a label byte vector.
pub fn one_hot_labels<T: Element>(labels: &[u8], classes: usize) -> Result<Matrix<T>> {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(DataError::LabelRange { label: l, classes });
        }
        y.set(i, l as usize, T::ONE);
    }
    Ok(y)
}

/// Load the four standard MNIST files from `dir`.
///
/// Rows 0..55000 are the training split, the last 5000 training-file rows
/// are the validation split (hand-tuning only), and the 10000 test-file rows
/// are the test split; the masks are disjoint.
pub fn load_mnist<T: Element>(dir: &Path) -> Result<LabeledDataset<T>> {
    let train_images = match parse_idx::<T>(&read_dataset_file(dir, "train-images-idx3-ubyte")?)? {
        IdxData::Images(m) => m,
        IdxData::Labels(_) => return Err(DataError::BadMagic { found: IDX_MAGIC_LABELS }),
    };
    let train_labels = match parse_idx::<T>(&read_dataset_file(dir, "train-labels-idx1-ubyte")?)? {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => return Err(DataError::BadMagic { found: IDX_MAGIC_IMAGES }),
    };
    let test_images = match parse_idx::<T>(&read_dataset_file(dir, "t10k-images-idx3-ubyte")?)? {
        IdxData::Images(m) => m,
        IdxData::Labels(_) => return Err(DataError::BadMagic { found: IDX_MAGIC_LABELS }),
    };
    let test_labels = match parse_idx::<T>(&read_dataset_file(dir, "t10k-labels-idx1-ubyte")?)? {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => return Err(DataError::BadMagic { found: IDX_MAGIC_IMAGES }),
    };

    let n_train = train_images.rows();
    let n_test = test_images.rows();
    let n = n_train + n_test;
    let features = train_images.cols();

    let mut data = Vec::with_capacity(n * features);
    data.extend_from_slice(train_images.data());
    data.extend_from_slice(test_images.data());
    let x = Matrix::from_vec(n, features, data).expect("concatenated rows");

    let mut labels = train_labels;
    labels.extend_from_slice(&test_labels);
    let y = one_hot_labels(&labels, 10)?;

    let val_size = 5000.min(n_train);
    let train_end = n_train - val_size;
    let train_mask: Vec<bool> = (0..n).map(|i| i < train_end).collect();
    let val_mask: Vec<bool> = (0..n).map(|i| i >= train_end && i < n_train).collect();
    let test_mask: Vec<bool> = (0..n).map(|i| i >= n_train).collect();

    Ok(LabeledDataset {
        x,
        y,
        train_mask,
        val_mask,
        test_mask,
    })
}

/// Load the Cora citation network from its content and cites files.
///
/// Features are row-normalized to sum one (all-zero rows stay zero). The
/// semi-supervised split is the canonical 140/500/1000 protocol of the
/// reference graph-convolution implementation, deterministic in file
/// order: nodes 500..1500 are the test split, the first 20 nodes per class
/// outside the test split are the training split, and the first 500
/// remaining nodes are the validation split. Citations referencing unknown
/// ids are skipped and counted.
pub fn load_cora<T: Element>(content_path: &Path, cites_path: &Path) -> Result<GraphDataset<T>> {
    let content = read_maybe_gz(content_path)?;
    let content = String::from_utf8_lossy(&content);

    let mut id_to_index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();

    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(DataError::MalformedLine {
                path: content_path.to_path_buf(),
                line: lineno + 1,
                reason: format!("expected id, features, label; found {} fields", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let label = fields[fields.len() - 1].to_string();
        let mut row = Vec::with_capacity(fields.len() - 2);
        for f in &fields[1..fields.len() - 1] {
            let v: f64 = f.parse().map_err(|_| DataError::MalformedLine {
                path: content_path.to_path_buf(),
                line: lineno + 1,
                reason: format!("feature value {f:?} is not numeric"),
            })?;
            row.push(v);
        }
        if let Some(prev) = features.first() {
            if row.len() != prev.len() {
                return Err(DataError::MalformedLine {
                    path: content_path.to_path_buf(),
                    line: lineno + 1,
                    reason: format!("feature count {} differs from {}", row.len(), prev.len()),
                });
            }
        }
        let class = match class_names.iter().position(|c| c == &label) {
            Some(c) => c,
            None => {
                class_names.push(label);
                class_names.len() - 1
            }
        };
        id_to_index.insert(id, features.len());
        features.push(row);
        labels.push(class);
    }

    let n = features.len();
    let n_features = features.first().map_or(0, |r| r.len());
    let n_classes = class_names.len();

    let mut x = Matrix::zeros(n, n_features);
    for (i, row) in features.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        let inv = if sum > 0.0 { 1.0 / sum } else { 0.0 };
        let dst = x.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            dst[j] = T::from_f64(v * inv);
        }
    }

    let mut y = Matrix::zeros(n, n_classes);
    for (i, &c) in labels.iter().enumerate() {
        y.set(i, c, T::ONE);
    }

    let cites = read_maybe_gz(cites_path)?;
    let cites = String::from_utf8_lossy(&cites);
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DataError::MalformedLine {
                path: cites_path.to_path_buf(),
                line: lineno + 1,
                reason: format!("expected two node ids, found {}", fields.len()),
            });
        }
        match (id_to_index.get(fields[0]), id_to_index.get(fields[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }

    // Deterministic split in file order, matching the reference protocol.
    let test_start = 500.min(n);
    let test_end = 1500.min(n);
    let mut test_mask = vec![false; n];
    for m in test_mask.iter_mut().take(test_end).skip(test_start) {
        *m = true;
    }

    const PER_CLASS: usize = 20;
    let mut train_mask = vec![false; n];
    let mut taken = vec![0usize; n_classes];
    for i in 0..n {
        if !test_mask[i] && taken[labels[i]] < PER_CLASS {
            train_mask[i] = true;
            taken[labels[i]] += 1;
        }
    }
    for (c, &t) in taken.iter().enumerate() {
        if t < PER_CLASS {
            return Err(DataError::ClassTooSmall {
                label: class_names[c].clone(),
                available: t,
                need: PER_CLASS,
            });
        }
    }

    let mut val_mask = vec![false; n];
    let mut val_taken = 0;
    for i in 0..n {
        if val_taken == 500 {
            break;
        }
        if !test_mask[i] && !train_mask[i] {
            val_mask[i] = true;
            val_taken += 1;
        }
    }

    Ok(GraphDataset {
        data: LabeledDataset {
            x,
            y,
            train_mask,
            val_mask,
            test_mask,
        },
        edges,
        n,
        skipped_citations: skipped,
    })
}

/// Two linearly separable Gaussian blobs; the whole set is the training
/// split. Toy data for convergence and determinism smoke tests.
pub fn two_blobs<T: Element>(per_class: usize, dim: usize, seed: u64) -> LabeledDataset<T> {
    let mut rng = SplitMix64::new(seed);
    let n = per_class * 2;
    let mut x = Matrix::zeros(n, dim);
    let mut y = Matrix::zeros(n, 2);
    for i in 0..n {
        let class = i % 2;
        let center = if class == 0 { -2.0 } else { 2.0 };
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = T::from_f64(center + 0.5 * rng.next_gauss());
        }
        y.set(i, class, T::ONE);
    }
    LabeledDataset {
        x,
        y,
        train_mask: vec![true; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
    }
}
