//! Minimal dense linear-algebra kernel.
//!
//! Everything the training engine multiplies, transposes or reduces goes
//! through here. Matrices are dense, row-major, and generic over the element
//! type: `f64` for verification work (gradient checks, oracles) and `f32`
//! for training speed.
//!
//! Determinism contract: every operation accumulates each output element in
//! a fixed order that does not depend on thread count. `matmul` and
//! `matmul_tn` sum strictly in ascending inner index; the dot-product kernel
//! used by `matmul_nt` sums in a fixed 8-lane striped order (identical on
//! every run, combined in a fixed tree). Parallelism only ever splits work
//! across independent output elements, never inside one accumulation, so
//! results are bit-identical for any thread count.

use rayon::prelude::*;
use std::fmt;
use thiserror::Error;

/// Element width of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar type usable as a matrix element.
pub trait Element:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const PRECISION: Precision;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_element {
    ($t:ty, $prec:expr) => {
        impl Element for $t {
            const PRECISION: Precision = $prec;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_element!(f32, Precision::F32);
impl_element!(f64, Precision::F64);

/// Shape violations reported by the kernel. Every message carries the
/// offending dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{op}: dimension mismatch: left is {lr}x{lc}, right is {rr}x{rc}")]
    DimMismatch {
        op: &'static str,
        lr: usize,
        lc: usize,
        rr: usize,
        rc: usize,
    },
    #[error("{op}: data length {len} does not match {rows}x{cols}")]
    DataLength {
        op: &'static str,
        len: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: vector length {got}, expected {expected}")]
    VectorLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, ShapeError>;

/// Dense row-major matrix.
///
/// Values are immutable from the caller's perspective: operations return new
/// matrices. The only mutating entry points are the explicitly in-place
/// update methods used by the optimizer between steps (`axpy_inplace`,
/// `scale_inplace`), which are single-writer by contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ShapeError::DataLength {
                op: "from_vec",
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { T::ONE } else { T::ZERO })
    }

    #[inline(always)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline(always)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    #[inline(always)]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Gather the listed rows into a new matrix (batch assembly).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs().to_f64()))
    }

    /// Flattened dot product of two same-shaped matrices, accumulated in f64.
    pub fn flat_dot_f64(&self, other: &Matrix<T>) -> Result<f64> {
        check_same_shape("flat_dot", self, other)?;
        let mut acc = 0.0f64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a.to_f64() * b.to_f64();
        }
        Ok(acc)
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
    }

    pub fn from_f64_matrix(src: &Matrix<f64>) -> Self {
        Matrix {
            rows: src.rows,
            cols: src.cols,
            data: src.data.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    /// In-place `self += alpha * x`. Optimizer-only entry point; single
    /// writer by contract.
    pub fn axpy_inplace(&mut self, alpha: T, x: &Matrix<T>) -> Result<()> {
        check_same_shape("axpy_inplace", self, x)?;
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
        Ok(())
    }

    /// In-place `self *= alpha`. Optimizer-only entry point.
    pub fn scale_inplace(&mut self, alpha: T) {
        for s in self.data.iter_mut() {
            *s *= alpha;
        }
    }
}

fn check_same_shape<T: Element>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ShapeError::DimMismatch {
            op,
            lr: a.rows,
            lc: a.cols,
            rr: b.rows,
            rc: b.cols,
        });
    }
    Ok(())
}

// Work below this many multiply-adds stays on one thread.
const PAR_THRESHOLD: usize = 1 << 15;
// Rows of the left operand handled per parallel task.
const ROW_CHUNK: usize = 32;
// Inner-dimension tile for the `matmul` kernel; keeps the right operand
// tile resident in cache while it is reused across the row chunk.
const K_TILE: usize = 256;

/// Dot product with a fixed 8-lane striped accumulation order.
///
/// Lane `l` sums elements `l, l+8, l+16, ...`; the tail element at offset
/// `t` past the last full stripe goes to lane `t`. Lanes combine as
/// `((l0+l1)+(l2+l3)) + ((l4+l5)+(l6+l7))`. The order depends only on the
/// slice length, never on threading.
#[inline]
fn dot8<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::ZERO; 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (ca, cb) in (&mut ac).zip(&mut bc) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    for (l, (&x, &y)) in ac.remainder().iter().zip(bc.remainder()).enumerate() {
        lanes[l] += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
}

/// `a * b`. Each output element accumulates over the inner index in
/// ascending order.
pub fn matmul<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(ShapeError::DimMismatch {
            op: "matmul",
            lr: a.rows,
            lc: a.cols,
            rr: b.rows,
            rc: b.cols,
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);

    let kernel = |i0: usize, c_rows: &mut [T]| {
        let rows_here = c_rows.len() / n;
        for k0 in (0..k).step_by(K_TILE) {
            let k1 = (k0 + K_TILE).min(k);
            for di in 0..rows_here {
                let a_row = a.row(i0 + di);
                let c_row = &mut c_rows[di * n..(di + 1) * n];
                for kk in k0..k1 {
                    let aik = a_row[kk];
                    let b_row = &b.data[kk * n..kk * n + n];
                    for (c, &bv) in c_row.iter_mut().zip(b_row) {
                        *c += aik * bv;
                    }
                }
            }
        }
    };

    if m * n * k < PAR_THRESHOLD {
        kernel(0, &mut out.data);
    } else {
        out.data
            .par_chunks_mut(ROW_CHUNK * n)
            .enumerate()
            .for_each(|(ci, c_rows)| kernel(ci * ROW_CHUNK, c_rows));
    }
    Ok(out)
}

/// `a * transpose(b)` without materializing the transpose. Bit-identical to
/// `matmul(a, &transpose(b))` would not hold (different kernel); instead the
/// contract is the fixed striped accumulation of [`dot8`].
pub fn matmul_nt<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(ShapeError::DimMismatch {
            op: "matmul_nt",
            lr: a.rows,
            lc: a.cols,
            rr: b.rows,
            rc: b.cols,
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = Matrix::zeros(m, n);

    // Column blocks parallelize while the (small) left operand stays hot in
    // cache and each right-operand row is streamed exactly once overall.
    const J_BLOCK: usize = 64;
    if m * n * k < PAR_THRESHOLD {
        for i in 0..m {
            let a_row = a.row(i);
            let c_row = out.row_mut(i);
            for j in 0..n {
                c_row[j] = dot8(a_row, b.row(j));
            }
        }
        return Ok(out);
    }

    let blocks: Vec<(usize, Vec<T>)> = (0..n)
        .into_par_iter()
        .step_by(J_BLOCK)
        .map(|j0| {
            let j1 = (j0 + J_BLOCK).min(n);
            let w = j1 - j0;
            let mut block = vec![T::ZERO; m * w];
            for (dj, j) in (j0..j1).enumerate() {
                let b_row = b.row(j);
                for i in 0..m {
                    block[i * w + dj] = dot8(a.row(i), b_row);
                }
            }
            (j0, block)
        })
        .collect();

    for (j0, block) in blocks {
        let w = block.len() / m;
        for i in 0..m {
            out.row_mut(i)[j0..j0 + w].copy_from_slice(&block[i * w..(i + 1) * w]);
        }
    }
    Ok(out)
}

/// `transpose(a) * b` without materializing the transpose. Each output
/// element accumulates over the inner (shared-row) index in ascending order.
pub fn matmul_tn<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(ShapeError::DimMismatch {
            op: "matmul_tn",
            lr: a.rows,
            lc: a.cols,
            rr: b.rows,
            rc: b.cols,
        });
    }
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);

    let kernel = |i0: usize, c_rows: &mut [T]| {
        let rows_here = c_rows.len() / n;
        for kk in 0..k {
            let a_row = a.row(kk);
            let b_row = b.row(kk);
            for di in 0..rows_here {
                let aik = a_row[i0 + di];
                let c_row = &mut c_rows[di * n..(di + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += aik * bv;
                }
            }
        }
    };

    if m * n * k < PAR_THRESHOLD {
        kernel(0, &mut out.data);
    } else {
        out.data
            .par_chunks_mut(ROW_CHUNK * n)
            .enumerate()
            .for_each(|(ci, c_rows)| kernel(ci * ROW_CHUNK, c_rows));
    }
    Ok(out)
}

/// (i, j) -> (j, i). Applying it twice returns the original bit pattern.
pub fn transpose<T: Element>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        let row = a.row(i);
        for (j, &v) in row.iter().enumerate() {
            out.data[j * a.rows + i] = v;
        }
    }
    out
}

/// Elementwise product.
pub fn hadamard<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    check_same_shape("hadamard", a, b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x * y)
        .collect();
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// `alpha * x + y`.
pub fn axpy<T: Element>(alpha: T, x: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    check_same_shape("axpy", x, y)?;
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(&xv, &yv)| alpha * xv + yv)
        .collect();
    Ok(Matrix {
        rows: x.rows,
        cols: x.cols,
        data,
    })
}

/// Elementwise sum.
pub fn add<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    axpy(T::ONE, a, b)
}

/// Row-wise softmax with max-subtraction for overflow safety.
pub fn softmax_rows<T: Element>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = a.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let mut mx = row[0];
        for &v in row.iter() {
            mx = mx.maximum(v);
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Broadcast-add a bias vector to every row.
pub fn add_bias_rows<T: Element>(a: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    if bias.len() != a.cols {
        return Err(ShapeError::VectorLength {
            op: "add_bias_rows",
            expected: a.cols,
            got: bias.len(),
        });
    }
    let mut out = a.clone();
    for i in 0..out.rows {
        for (v, &b) in out.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

/// Column sums, accumulated row-by-row in ascending row order.
pub fn col_sums<T: Element>(a: &Matrix<T>) -> Vec<T> {
    let mut out = vec![T::ZERO; a.cols];
    for i in 0..a.rows {
        for (s, &v) in out.iter_mut().zip(a.row(i)) {
            *s += v;
        }
    }
    out
}

/// Index of the largest element per row (first occurrence wins ties).
pub fn argmax_rows<T: Element>(a: &Matrix<T>) -> Vec<usize> {
    (0..a.rows)
        .map(|i| {
            let row = a.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
