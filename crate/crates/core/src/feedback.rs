//! Direct-feedback-alignment feedback machinery.
//!
//! The random feedback matrix `B` is never stored: at the sizes the
//! co-processor supports (millions of rows and columns, trillions of
//! entries) there is nothing to store it in. Instead [`FeedbackMatrixSpec`]
//! defines it implicitly: entry (i, j) is a counter-based standard-normal
//! draw derived from (seed, i, j), so any element, row, or slice can be
//! regenerated on demand, bit-identically, on any platform.
//!
//! The simulated co-processor ternarizes its input to {-1, 0, +1}, projects
//! the positive and negative parts in two acquisitions, subtracts, and adds
//! per-acquisition read noise scaled to the signal RMS.

use crate::rng::{gauss_at, mix64};
use rayon::prelude::*;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("entry index ({i}, {j}) outside {out_dim}x{in_dim} feedback matrix")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        out_dim: usize,
        in_dim: usize,
    },
    #[error("input vector length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("slice [{offset}, {offset}+{width}) does not fit in {out_dim} feedback rows")]
    InvalidSlice {
        offset: usize,
        width: usize,
        out_dim: usize,
    },
    #[error("ternarization threshold must be positive")]
    NonPositiveThreshold,
    #[error("row range {start}..{end} outside {out_dim} feedback rows")]
    RowRange {
        start: usize,
        end: usize,
        out_dim: usize,
    },
}

pub type Result<T> = std::result::Result<T, FeedbackError>;

/// Absolute noise std used when the projected signal is exactly zero, so a
/// relative noise model still produces a (vanishing) read. See
/// [`optical_project`].
pub const NOISE_FLOOR: f64 = 1e-12;

/// Implicit Gaussian feedback matrix: `out_dim` x `in_dim`, element std
/// `scale`, fully determined by `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackMatrixSpec {
    pub seed: u64,
    pub out_dim: usize,
    pub in_dim: usize,
    pub scale: f64,
}

impl FeedbackMatrixSpec {
    /// Spec with the default element std `1 / sqrt(in_dim)`, which keeps the
    /// magnitude of projected error signals comparable across output widths.
    pub fn new(seed: u64, out_dim: usize, in_dim: usize) -> Self {
        assert!(in_dim > 0, "feedback matrix needs at least one column");
        FeedbackMatrixSpec {
            seed,
            out_dim,
            in_dim,
            scale: 1.0 / (in_dim as f64).sqrt(),
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Entry (i, j), generated on demand.
    ///
    /// The construction is frozen: cell counter `i * in_dim + j` indexes a
    /// splitmix64 stream, two consecutive stream words become two uniforms,
    /// and Box-Muller turns them into one standard-normal draw (times
    /// `scale`). Evaluated via `libm`, so identical inputs give bit-identical
    /// outputs across runs and platforms.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.out_dim || j >= self.in_dim {
            return Err(FeedbackError::IndexOutOfRange {
                i,
                j,
                out_dim: self.out_dim,
                in_dim: self.in_dim,
            });
        }
        Ok(self.entry_unchecked(i, j))
    }

    #[inline(always)]
    fn entry_unchecked(&self, i: usize, j: usize) -> f64 {
        let counter = (i as u64) * (self.in_dim as u64) + j as u64;
        self.scale * gauss_at(self.seed, counter)
    }

    /// Dense copy of the matrix. Verification helper for oracle tests and
    /// the self-check command; only sensible at small sizes. The training
    /// path never calls this.
    pub fn materialize(&self) -> Vec<Vec<f64>> {
        (0..self.out_dim)
            .map(|i| (0..self.in_dim).map(|j| self.entry_unchecked(i, j)).collect())
            .collect()
    }
}

/// Contiguous block of feedback-matrix rows assigned to one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlice {
    pub offset: usize,
    pub width: usize,
}

impl LayerSlice {
    pub fn new(offset: usize, width: usize) -> Self {
        LayerSlice { offset, width }
    }

    pub fn end(&self) -> usize {
        self.offset + self.width
    }
}

/// Ternarized vector: `values = pos - neg`, with `pos`/`neg` the binary
/// indicators actually presented to the (binary-input) co-processor.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryVector {
    pub values: Vec<f64>,
    pub pos: Vec<bool>,
    pub neg: Vec<bool>,
}

impl TernaryVector {
    /// The {0, 1} vector of +1 positions.
    pub fn pos_vector(&self) -> Vec<f64> {
        self.pos.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()
    }

    /// The {0, 1} vector of -1 positions.
    pub fn neg_vector(&self) -> Vec<f64> {
        self.neg.iter().map(|&n| if n { 1.0 } else { 0.0 }).collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Analog read model for the simulated co-processor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    /// Additive Gaussian read noise per acquisition, as a fraction of the
    /// projected signal RMS. Zero reduces the backend exactly to ternarized
    /// projection.
    pub noise_std: f64,
    /// Ternarization threshold tau.
    pub threshold: f64,
}

impl OpticalConfig {
    pub fn new(noise_std: f64, threshold: f64) -> Self {
        OpticalConfig {
            noise_std,
            threshold,
        }
    }
}

/// Map to {-1, 0, +1} with a fixed threshold. Strict inequalities: values
/// exactly at +-tau map to zero.
pub fn ternarize(e: &[f64], threshold: f64) -> Result<TernaryVector> {
    if !(threshold > 0.0) {
        return Err(FeedbackError::NonPositiveThreshold);
    }
    let mut values = Vec::with_capacity(e.len());
    let mut pos = Vec::with_capacity(e.len());
    let mut neg = Vec::with_capacity(e.len());
    for &x in e {
        if x > threshold {
            values.push(1.0);
            pos.push(true);
            neg.push(false);
        } else if x < -threshold {
            values.push(-1.0);
            pos.push(false);
            neg.push(true);
        } else {
            values.push(0.0);
            pos.push(false);
            neg.push(false);
        }
    }
    Ok(TernaryVector { values, pos, neg })
}

/// Contiguous sub-vector of a full projection, by layer slice.
pub fn slice_for_layer<'a>(full: &'a [f64], slice: LayerSlice) -> Result<&'a [f64]> {
    if slice.end() > full.len() {
        return Err(FeedbackError::InvalidSlice {
            offset: slice.offset,
            width: slice.width,
            out_dim: full.len(),
        });
    }
    Ok(&full[slice.offset..slice.end()])
}

/// Exact product `B * e` using on-demand entries. Output rows are computed
/// independently (and in parallel when large); each row accumulates over the
/// columns in ascending order, so the result is deterministic for any thread
/// count.
pub fn project(spec: &FeedbackMatrixSpec, e: &[f64]) -> Result<Vec<f64>> {
    project_rows(spec, e, 0..spec.out_dim)
}

/// Partial evaluation of `B * e` over a row range. Working memory is
/// O(requested rows + in_dim) regardless of the matrix size, which is what
/// makes the million-component specs usable.
pub fn project_rows(spec: &FeedbackMatrixSpec, e: &[f64], rows: Range<usize>) -> Result<Vec<f64>> {
    if e.len() != spec.in_dim {
        return Err(FeedbackError::LengthMismatch {
            expected: spec.in_dim,
            got: e.len(),
        });
    }
    if rows.end > spec.out_dim || rows.start > rows.end {
        return Err(FeedbackError::RowRange {
            start: rows.start,
            end: rows.end,
            out_dim: spec.out_dim,
        });
    }

    let row_product = |i: usize| -> f64 {
        let base = (i as u64) * (spec.in_dim as u64);
        let mut acc = 0.0;
        for (j, &ej) in e.iter().enumerate() {
            acc += spec.scale * gauss_at(spec.seed, base + j as u64) * ej;
        }
        acc
    };

    let n_rows = rows.end - rows.start;
    if n_rows * spec.in_dim < 1 << 14 {
        Ok(rows.map(row_product).collect())
    } else {
        Ok(rows.into_par_iter().map(row_product).collect())
    }
}

/// Simulated co-processor read: ternarize, project the {0,1} positive and
/// negative indicator vectors in two acquisitions, subtract, and apply the
/// two acquisitions' read noise.
///
/// The noiseless signal is computed as the single projection of the ternary
/// values (columns in ascending order), so with `noise_std = 0` the output
/// bit-equals `project(spec, ternarize(e, tau).values)`. Noise draws eta1,
/// eta2 come from `noise_seed` with std `noise_std * RMS(signal)` (or the
/// absolute [`NOISE_FLOOR`] for an all-zero signal) and enter as
/// `(signal[k] + eta1[k]) - eta2[k]`.
pub fn optical_project(
    spec: &FeedbackMatrixSpec,
    e: &[f64],
    cfg: &OpticalConfig,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    let t = ternarize(e, cfg.threshold)?;
    let mut signal = project(spec, &t.values)?;
    if cfg.noise_std == 0.0 {
        return Ok(signal);
    }

    let rms = {
        let sum_sq: f64 = signal.iter().map(|&s| s * s).sum();
        (sum_sq / signal.len().max(1) as f64).sqrt()
    };
    let std = if rms > 0.0 {
        cfg.noise_std * rms
    } else {
        NOISE_FLOOR
    };

    // Acquisition 1 noise at counter positions [0, out_dim), acquisition 2
    // at [2^32, 2^32 + out_dim).
    let nseed = mix64(noise_seed);
    for (k, s) in signal.iter_mut().enumerate() {
        let eta1 = std * gauss_at(nseed, k as u64);
        let eta2 = std * gauss_at(nseed, (1u64 << 32) + k as u64);
        *s = (*s + eta1) - eta2;
    }
    Ok(signal)
}
