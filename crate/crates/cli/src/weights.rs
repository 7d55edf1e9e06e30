//! Versioned binary weights file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ODFA" | u32 version = 1 | u32 element size (4 or 8)
//! u64 layer count
//! per layer: u64 rows, u64 cols, u64 bias length
//! per layer: rows*cols weight elements (row-major), then bias elements,
//!            little-endian IEEE-754 in the declared element size
//! ```
//!
//! A bias length of zero marks a graph-convolutional layer.

use anyhow::{bail, Context, Result};
use opto_dfa::feedback::LayerSlice;
use opto_dfa::linalg::{Element, Matrix, Precision};
use opto_dfa::models::{Activation, DenseLayer, GraphConvLayer, Layer, Network};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ODFA";
const VERSION: u32 = 1;

pub fn write_weights<T: Element>(net: &Network<T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::PRECISION.bytes() as u32).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u64).to_le_bytes());
    for layer in net.layers() {
        let w = layer.weights();
        let bias_len = match layer {
            Layer::Dense(l) => l.b.len(),
            Layer::GraphConv(_) => 0,
        };
        out.extend_from_slice(&(w.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(w.cols() as u64).to_le_bytes());
        out.extend_from_slice(&(bias_len as u64).to_le_bytes());
    }
    for layer in net.layers() {
        push_elements(&mut out, layer.weights().data());
        if let Layer::Dense(l) = layer {
            push_elements(&mut out, &l.b);
        }
    }
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating weights file {}", path.display()))?;
    f.write_all(&out)?;
    Ok(())
}

fn push_elements<T: Element>(out: &mut Vec<u8>, data: &[T]) {
    match T::PRECISION {
        Precision::F32 => {
            for &v in data {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in data {
                out.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
    }
}

/// Raw decoded layer: weights plus optional bias.
#[derive(Debug)]
pub struct RawLayer {
    pub w: Matrix<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct WeightsFile {
    pub precision: Precision,
    pub layers: Vec<RawLayer>,
}

pub fn read_weights(path: &Path) -> Result<WeightsFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .with_context(|| format!("opening weights file {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let mut cur = 0usize;

    let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() < *cur + n {
            bail!(
                "weights file truncated at byte {} (need {} more)",
                *cur,
                *cur + n - bytes.len()
            );
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };

    if take(&mut cur, 4)? != MAGIC {
        bail!("not a weights file: bad magic");
    }
    let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    if version != VERSION {
        bail!("unsupported weights version {version} (expected {VERSION})");
    }
    let elem = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    let precision = match elem {
        4 => Precision::F32,
        8 => Precision::F64,
        other => bail!("unsupported element size {other}"),
    };
    let n_layers = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;

    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let bias = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        dims.push((rows, cols, bias));
    }

    let read_vec = |cur: &mut usize, n: usize| -> Result<Vec<f64>> {
        let width = precision.bytes();
        let raw = take(cur, n * width)?;
        Ok(match precision {
            Precision::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Precision::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    };

    let mut layers = Vec::with_capacity(n_layers);
    for &(rows, cols, bias_len) in &dims {
        let w = Matrix::from_vec(rows, cols, read_vec(&mut cur, rows * cols)?)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let bias = if bias_len > 0 {
            Some(read_vec(&mut cur, bias_len)?)
        } else {
            None
        };
        layers.push(RawLayer { w, bias });
    }
    if cur != bytes.len() {
        bail!("weights file has {} trailing bytes", bytes.len() - cur);
    }
    Ok(WeightsFile { precision, layers })
}

/// Rebuild a network from decoded layers: dense when biases are present,
/// graph-convolutional otherwise, hidden activation as given, feedback
/// slices retiled.
pub fn network_from_weights<T: Element>(
    file: &WeightsFile,
    hidden_activation: Activation,
) -> Result<Network<T>> {
    let n = file.layers.len();
    if n == 0 {
        bail!("weights file has no layers");
    }
    let dense = file.layers[0].bias.is_some();
    let mut layers = Vec::with_capacity(n);
    let mut offset = 0usize;
    for (i, raw) in file.layers.iter().enumerate() {
        let is_last = i == n - 1;
        let activation = if is_last { Activation::Identity } else { hidden_activation };
        let out_width = if dense { raw.w.rows() } else { raw.w.cols() };
        let feedback_slice = if is_last {
            None
        } else {
            let s = LayerSlice::new(offset, out_width);
            offset += out_width;
            Some(s)
        };
        let w = Matrix::<T>::from_f64_matrix(&raw.w);
        layers.push(if dense {
            let bias = raw
                .bias
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("layer {i}: mixed dense/graph layers"))?;
            Layer::Dense(DenseLayer {
                w,
                b: bias.iter().map(|&v| T::from_f64(v)).collect(),
                activation,
                feedback_slice,
            })
        } else {
            if raw.bias.is_some() {
                bail!("layer {i}: mixed dense/graph layers");
            }
            Layer::GraphConv(GraphConvLayer {
                w,
                activation,
                feedback_slice,
            })
        });
    }
    Network::from_layers(layers).map_err(|e| anyhow::anyhow!("{e}"))
}
