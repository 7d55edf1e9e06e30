//! Hidden-activation export and exact t-SNE.
//!
//! The embedding is the exact O(n^2) variant: per-point Gaussian bandwidths
//! found by bisection to match a target perplexity, symmetrized joint P,
//! Student-t low-dimensional kernel, and gradient descent with momentum
//! (0.5 until iteration 250, then 0.8), per-parameter gains, learning rate
//! 200 and 12x early exaggeration for the first 250 iterations — the cited
//! method's canonical defaults. Everything is seeded and deterministic.

use crate::data::Dataset;
use crate::linalg::{Element, Matrix};
use crate::models::{forward, normalized_adjacency, ModelError, Network};
use crate::rng::SplitMix64;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VizError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("layer {index} is not a hidden layer of a {layers}-layer network")]
    BadLayer { index: usize, layers: usize },
    #[error("perplexity {perplexity} must be in [1, n/3) for n = {n}")]
    BadPerplexity { perplexity: f64, n: usize },
    #[error("exact t-SNE is limited to 10000 points, got {n}")]
    TooManyPoints { n: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, VizError>;

/// A finished embedding: 2-D points and the per-iteration KL divergence.
#[derive(Debug, Clone)]
pub struct EmbeddingRun {
    pub points: Matrix<f64>,
    pub kl_trace: Vec<f64>,
    /// Input rows were all identical and received seeded 1e-10 jitter.
    pub jittered: bool,
}

/// Activations of one hidden layer over the whole dataset, evaluation-mode
/// forward (no dropout).
pub fn extract_hidden<T: Element>(
    net: &Network<T>,
    dataset: &Dataset<T>,
    layer: usize,
) -> Result<Matrix<T>> {
    let n_layers = net.layers().len();
    if layer + 1 >= n_layers {
        return Err(VizError::BadLayer {
            index: layer,
            layers: n_layers,
        });
    }
    let adj = match dataset {
        Dataset::Graph(g) => Some(normalized_adjacency::<T>(&g.edges, g.n)?),
        Dataset::Tabular(_) => None,
    };
    let (_, trace) = forward(net, &dataset.labeled().x, adj.as_ref())?;
    Ok(trace.post[layer].clone())
}

const TSNE_LEARNING_RATE: f64 = 200.0;
const EARLY_EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_SWITCH: usize = 250;
const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const PERPLEXITY_TOL: f64 = 1e-4;
const BISECTION_ITERS: usize = 50;
const Q_FLOOR: f64 = 1e-12;

/// Exact t-SNE to two dimensions.
pub fn tsne(x: &Matrix<f64>, perplexity: f64, iterations: usize, seed: u64) -> Result<EmbeddingRun> {
    let n = x.rows();
    if n > 10_000 {
        return Err(VizError::TooManyPoints { n });
    }
    if !(perplexity >= 1.0) || perplexity * 3.0 >= n as f64 {
        return Err(VizError::BadPerplexity { perplexity, n });
    }

    let mut rng = SplitMix64::new(seed);
    let mut x = x.clone();
    let mut dist = pairwise_sq_dists(&x);
    let mut jittered = false;
    if dist.iter().all(|&d| d == 0.0) {
        // All rows identical: bandwidths are undefined. Jitter and warn.
        eprintln!("tsne: input rows are all identical; applying seeded 1e-10 jitter");
        jittered = true;
        let mut jitter_rng = rng.derive(0x717);
        for i in 0..n {
            for v in x.row_mut(i) {
                *v += 1e-10 * jitter_rng.next_gauss();
            }
        }
        dist = pairwise_sq_dists(&x);
    }

    let p = joint_probabilities(&dist, n, perplexity);

    // N(0, 1e-4 std) initialization.
    let mut y = vec![0.0f64; n * 2];
    for v in y.iter_mut() {
        *v = 1e-4 * rng.next_gauss();
    }

    let mut update = vec![0.0f64; n * 2];
    let mut gains = vec![1.0f64; n * 2];
    let mut num = vec![0.0f64; n * n];
    let mut kl_trace = Vec::with_capacity(iterations);

    for iter in 0..iterations {
        // Student-t numerators and their total.
        let sum_num: f64 = {
            num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let yi = (y[2 * i], y[2 * i + 1]);
                for (j, slot) in row.iter_mut().enumerate() {
                    if i == j {
                        *slot = 0.0;
                    } else {
                        let dy0 = yi.0 - y[2 * j];
                        let dy1 = yi.1 - y[2 * j + 1];
                        *slot = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                    }
                }
            });
            num.chunks(n).map(|row| row.iter().sum::<f64>()).sum()
        };

        let exaggeration = if iter < EXAGGERATION_ITERS {
            EARLY_EXAGGERATION
        } else {
            1.0
        };

        // Gradient and KL (true, unexaggerated P) in one pass per point.
        let results: Vec<([f64; 2], f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let yi = (y[2 * i], y[2 * i + 1]);
                let mut g = [0.0f64; 2];
                let mut kl = 0.0f64;
                let p_row = &p[i * n..(i + 1) * n];
                let n_row = &num[i * n..(i + 1) * n];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let q = (n_row[j] / sum_num).max(Q_FLOOR);
                    let pij = p_row[j];
                    let coeff = (exaggeration * pij - q) * n_row[j];
                    g[0] += coeff * (yi.0 - y[2 * j]);
                    g[1] += coeff * (yi.1 - y[2 * j + 1]);
                    if pij > 0.0 {
                        kl += pij * (pij / q).ln();
                    }
                }
                ([4.0 * g[0], 4.0 * g[1]], kl)
            })
            .collect();

        kl_trace.push(results.iter().map(|r| r.1).sum());

        let momentum = if iter < MOMENTUM_SWITCH {
            INITIAL_MOMENTUM
        } else {
            FINAL_MOMENTUM
        };
        for i in 0..n {
            for d in 0..2 {
                let k = 2 * i + d;
                let grad = results[i].0[d];
                gains[k] = if (grad > 0.0) == (update[k] > 0.0) {
                    (gains[k] * 0.8).max(0.01)
                } else {
                    gains[k] + 0.2
                };
                update[k] = momentum * update[k] - TSNE_LEARNING_RATE * gains[k] * grad;
                y[k] += update[k];
            }
        }
        // Keep the embedding centered.
        let mean0 = y.iter().step_by(2).sum::<f64>() / n as f64;
        let mean1 = y.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        for i in 0..n {
            y[2 * i] -= mean0;
            y[2 * i + 1] -= mean1;
        }
    }

    Ok(EmbeddingRun {
        points: Matrix::from_vec(n, 2, y).expect("n x 2"),
        kl_trace,
        jittered,
    })
}

fn pairwise_sq_dists(x: &Matrix<f64>) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0f64; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = x.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let xj = x.row(j);
            let mut acc = 0.0;
            for (a, b) in xi.iter().zip(xj) {
                let diff = a - b;
                acc += diff * diff;
            }
            *slot = acc;
        }
    });
    d
}

/// Conditional Gaussians with per-point bandwidth bisected to the target
/// perplexity, then symmetrized to a joint distribution summing to one.
fn joint_probabilities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let mut cond = vec![0.0f64; n * n];
    cond.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| bisect_conditional_row(&dist[i * n..(i + 1) * n], i, perplexity, row));

    let mut joint = vec![0.0f64; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    joint
}

/// Attained perplexity (entropy exponential) of each conditional row, using
/// the same bisection as the embedding; test hook for the bisection
/// contract.
pub fn attained_perplexities(x: &Matrix<f64>, perplexity: f64) -> Vec<f64> {
    let n = x.rows();
    let dist = pairwise_sq_dists(x);
    let mut cond = vec![0.0f64; n * n];
    cond.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| bisect_conditional_row(&dist[i * n..(i + 1) * n], i, perplexity, row));
    cond.chunks(n)
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
                .exp()
        })
        .collect()
}

/// One row's conditional Gaussian with the bandwidth bisected to the target
/// perplexity, written into `out`.
fn bisect_conditional_row(d_row: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let target_entropy = perplexity.ln();
    let mut beta = 1.0f64;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    let d_min = d_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);

    for _ in 0..BISECTION_ITERS {
        // Weights shifted by the row minimum so large beta cannot underflow
        // every term; the shift cancels in the normalization.
        let mut sum_w = 0.0f64;
        let mut sum_dw = 0.0f64;
        for (j, &d) in d_row.iter().enumerate() {
            if j == i {
                continue;
            }
            let w = (-beta * (d - d_min)).exp();
            sum_w += w;
            sum_dw += (d - d_min) * w;
        }
        let entropy = beta * sum_dw / sum_w + sum_w.ln();
        if (entropy.exp() - perplexity).abs() <= PERPLEXITY_TOL {
            break;
        }
        if entropy > target_entropy {
            beta_min = beta;
            beta = if beta_max.is_infinite() {
                beta * 2.0
            } else {
                0.5 * (beta + beta_max)
            };
        } else {
            beta_max = beta;
            beta = if beta_min.is_infinite() {
                beta * 0.5
            } else {
                0.5 * (beta + beta_min)
            };
        }
    }

    let mut sum_w = 0.0f64;
    for (j, &d) in d_row.iter().enumerate() {
        if j != i {
            out[j] = (-beta * (d - d_min)).exp();
            sum_w += out[j];
        }
    }
    for (j, v) in out.iter_mut().enumerate() {
        if j != i {
            *v /= sum_w;
        }
    }
    out[i] = 0.0;
}

/// Joint P matrix for inspection; rows of `x`, target perplexity.
pub fn p_matrix(x: &Matrix<f64>, perplexity: f64) -> Vec<f64> {
    let dist = pairwise_sq_dists(x);
    joint_probabilities(&dist, x.rows(), perplexity)
}

/// Mean silhouette coefficient of the embedding under the true labels.
pub fn silhouette_score(points: &Matrix<f64>, labels: &[usize]) -> f64 {
    let n = points.rows();
    assert_eq!(labels.len(), n, "one label per point");
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let class_sizes = {
        let mut sizes = vec![0usize; n_classes];
        for &l in labels {
            sizes[l] += 1;
        }
        sizes
    };

    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0f64; n_classes];
            let pi = points.row(i);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pj = points.row(j);
                let mut acc = 0.0;
                for (a, b) in pi.iter().zip(pj) {
                    let d = a - b;
                    acc += d * d;
                }
                sums[labels[j]] += acc.sqrt();
            }
            let own = labels[i];
            if class_sizes[own] <= 1 {
                return 0.0;
            }
            let a = sums[own] / (class_sizes[own] - 1) as f64;
            let b = (0..n_classes)
                .filter(|&c| c != own && class_sizes[c] > 0)
                .map(|c| sums[c] / class_sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            (b - a) / a.max(b)
        })
        .collect();
    scores.iter().sum::<f64>() / n as f64
}

/// Write `x,y,label` rows (header first) for external plotting.
pub fn export_embedding(run: &EmbeddingRun, labels: &[usize], path: &Path) -> Result<()> {
    let io_err = |source| VizError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = String::from("x,y,label\n");
    for i in 0..run.points.rows() {
        let label = labels.get(i).copied().unwrap_or(0);
        out.push_str(&format!(
            "{},{},{}\n",
            run.points.get(i, 0),
            run.points.get(i, 1),
            label
        ));
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}
