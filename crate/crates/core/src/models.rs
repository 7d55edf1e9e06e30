//! Network definition, forward pass with trace retention, and the backward
//! rules: exact backpropagation, direct feedback alignment (three feedback
//! backends), and shallow top-layer-only training.
//!
//! Sign convention: every backward rule returns `+dL/d(param)`; the leading
//! minus of the update lives in the optimizer, which always applies
//! `W <- W - lr * grad`.

use crate::feedback::{self, FeedbackMatrixSpec, LayerSlice, OpticalConfig};
use crate::linalg::{
    add_bias_rows, argmax_rows, col_sums, hadamard, matmul, matmul_nt, matmul_tn, softmax_rows,
    Element, Matrix, ShapeError,
};
use crate::rng::{mix64, SplitMix64, GOLDEN};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Feedback(#[from] feedback::FeedbackError),
    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },
    #[error("mask length {got} does not match {expected} rows")]
    MaskLength { expected: usize, got: usize },
    #[error("no unmasked rows")]
    EmptyMask,
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {index}: input width {got}, previous layer produces {expected}")]
    LayerChain {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("network mixes dense and graph-convolutional layers")]
    MixedLayerKinds,
    #[error("output layer must use identity activation with no feedback slice")]
    BadOutputLayer,
    #[error("hidden layer {index} has no feedback slice")]
    MissingFeedbackSlice { index: usize },
    #[error("feedback slices do not tile the hidden widths: layer {index} expected offset {expected}, found {got}")]
    SliceTiling {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("graph-convolutional network needs an adjacency, dense network takes none")]
    AdjacencyMismatch,
    #[error("stale forward trace: layer {index} recorded {got_rows}x{got_cols}, network expects {want_rows}x{want_cols}")]
    StaleTrace {
        index: usize,
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("edge ({a}, {b}) references a node outside 0..{n}")]
    EdgeOutOfRange { a: usize, b: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Elementwise non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline(always)]
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation. relu'(0) is defined as 0.
    #[inline(always)]
    pub fn derivative<T: Element>(self, a: T) -> T {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                T::ONE - t * t
            }
            Activation::Relu => {
                if a > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Identity => T::ONE,
        }
    }
}

/// Fully-connected layer; weights are stored output-major (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
    pub activation: Activation,
    pub feedback_slice: Option<LayerSlice>,
}

/// Graph-convolutional layer (in x out weights, no bias); consumes a shared
/// normalized adjacency it never owns.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvLayer<T> {
    pub w: Matrix<T>,
    pub activation: Activation,
    pub feedback_slice: Option<LayerSlice>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(DenseLayer<T>),
    GraphConv(GraphConvLayer<T>),
}

impl<T: Element> Layer<T> {
    pub fn in_width(&self) -> usize {
        match self {
            Layer::Dense(l) => l.w.cols(),
            Layer::GraphConv(l) => l.w.rows(),
        }
    }

    pub fn out_width(&self) -> usize {
        match self {
            Layer::Dense(l) => l.w.rows(),
            Layer::GraphConv(l) => l.w.cols(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::GraphConv(l) => l.activation,
        }
    }

    pub fn feedback_slice(&self) -> Option<LayerSlice> {
        match self {
            Layer::Dense(l) => l.feedback_slice,
            Layer::GraphConv(l) => l.feedback_slice,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Layer::Dense(_))
    }

    pub fn weights(&self) -> &Matrix<T> {
        match self {
            Layer::Dense(l) => &l.w,
            Layer::GraphConv(l) => &l.w,
        }
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` for an undirected graph, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T> {
    matrix: Matrix<T>,
}

impl<T: Element> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }
}

/// Build the symmetric normalized adjacency: an edge in either direction
/// counts once, self-loops are added, then both sides are scaled by the
/// inverse square root of the (loop-augmented) degree.
pub fn normalized_adjacency<T: Element>(
    edges: &[(usize, usize)],
    n: usize,
) -> Result<NormalizedAdjacency<T>> {
    let mut a = vec![0.0f64; n * n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(ModelError::EdgeOutOfRange { a: u, b: v, n });
        }
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let mut inv_sqrt_deg = vec![0.0f64; n];
    for i in 0..n {
        let deg: f64 = a[i * n..(i + 1) * n].iter().sum();
        inv_sqrt_deg[i] = 1.0 / deg.sqrt();
    }
    let matrix = Matrix::from_fn(n, n, |i, j| {
        T::from_f64(a[i * n + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j])
    });
    Ok(NormalizedAdjacency { matrix })
}

/// Ordered layers plus the softmax cross-entropy head. All layers are dense
/// or all graph-convolutional; hidden layers carry disjoint feedback slices
/// tiling `[0, sum of hidden widths)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Element> Network<T> {
    /// Validate and wrap a layer stack.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ModelError::EmptyNetwork);
        }
        let all_dense = layers.iter().all(|l| l.is_dense());
        let all_graph = layers.iter().all(|l| !l.is_dense());
        if !all_dense && !all_graph {
            return Err(ModelError::MixedLayerKinds);
        }
        for i in 1..layers.len() {
            if layers[i].in_width() != layers[i - 1].out_width() {
                return Err(ModelError::LayerChain {
                    index: i,
                    expected: layers[i - 1].out_width(),
                    got: layers[i].in_width(),
                });
            }
        }
        let last = layers.len() - 1;
        if layers[last].activation() != Activation::Identity
            || layers[last].feedback_slice().is_some()
        {
            return Err(ModelError::BadOutputLayer);
        }
        let mut expected_offset = 0;
        for (i, layer) in layers[..last].iter().enumerate() {
            let slice = layer
                .feedback_slice()
                .ok_or(ModelError::MissingFeedbackSlice { index: i })?;
            if slice.offset != expected_offset || slice.width != layer.out_width() {
                return Err(ModelError::SliceTiling {
                    index: i,
                    expected: expected_offset,
                    got: slice.offset,
                });
            }
            expected_offset = slice.end();
        }
        Ok(Network { layers })
    }

    /// Fully-connected network `dims[0] -> dims[1] -> ... -> dims.last()`,
    /// hidden activation `hidden`, identity output head. Weights are
    /// Glorot-uniform from `rng`, biases zero.
    pub fn dense(dims: &[usize], hidden: Activation, rng: &mut SplitMix64) -> Result<Self> {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::new();
        let mut offset = 0;
        for i in 1..dims.len() {
            let (fan_in, fan_out) = (dims[i - 1], dims[i]);
            let w = glorot(fan_out, fan_in, fan_in, fan_out, rng);
            let is_last = i == dims.len() - 1;
            layers.push(Layer::Dense(DenseLayer {
                w,
                b: vec![T::ZERO; fan_out],
                activation: if is_last { Activation::Identity } else { hidden },
                feedback_slice: if is_last {
                    None
                } else {
                    let s = LayerSlice::new(offset, fan_out);
                    offset += fan_out;
                    Some(s)
                },
            }));
        }
        Network::from_layers(layers)
    }

    /// Graph-convolutional network over shared adjacency, same conventions
    /// as [`Network::dense`].
    pub fn graph_conv(dims: &[usize], hidden: Activation, rng: &mut SplitMix64) -> Result<Self> {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::new();
        let mut offset = 0;
        for i in 1..dims.len() {
            let (fan_in, fan_out) = (dims[i - 1], dims[i]);
            let w = glorot(fan_in, fan_out, fan_in, fan_out, rng);
            let is_last = i == dims.len() - 1;
            layers.push(Layer::GraphConv(GraphConvLayer {
                w,
                activation: if is_last { Activation::Identity } else { hidden },
                feedback_slice: if is_last {
                    None
                } else {
                    let s = LayerSlice::new(offset, fan_out);
                    offset += fan_out;
                    Some(s)
                },
            }));
        }
        Network::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access for the optimizer; single-writer between steps.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn is_graph(&self) -> bool {
        !self.layers[0].is_dense()
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    /// Total feedback rows needed: the sum of hidden-layer widths.
    pub fn feedback_out_dim(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_width())
            .sum()
    }

    /// The implicit feedback matrix matching this architecture.
    pub fn feedback_spec(&self, seed: u64) -> FeedbackMatrixSpec {
        FeedbackMatrixSpec::new(seed, self.feedback_out_dim(), self.out_width())
    }
}

fn glorot<T: Element>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut SplitMix64,
) -> Matrix<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::from_f64(rng.next_range(-limit, limit)))
}

/// Retained per-layer state from a forward pass: the effective input each
/// layer saw (post-dropout during training), the pre-activation, and the
/// activation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub inputs: Vec<Matrix<T>>,
    pub pre: Vec<Matrix<T>>,
    pub post: Vec<Matrix<T>>,
}

/// Evaluation-mode forward pass: predictions (row softmax of the last
/// pre-activation) plus the full trace.
pub fn forward<T: Element>(
    net: &Network<T>,
    x: &Matrix<T>,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    forward_with(net, x, adj, None)
}

/// Forward pass with optional input dropout (training mode). Dropout uses
/// inverted scaling and is applied to every layer's input; the trace records
/// the post-dropout inputs so every backward rule differentiates exactly
/// what the forward pass computed.
pub fn forward_with<T: Element>(
    net: &Network<T>,
    x: &Matrix<T>,
    adj: Option<&NormalizedAdjacency<T>>,
    mut dropout: Option<(f64, &mut SplitMix64)>,
) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    if net.is_graph() != adj.is_some() {
        return Err(ModelError::AdjacencyMismatch);
    }
    if x.cols() != net.in_width() {
        return Err(ShapeError::DimMismatch {
            op: "forward",
            lr: x.rows(),
            lc: x.cols(),
            rr: net.in_width(),
            rc: net.layers[0].out_width(),
        }
        .into());
    }

    let n_layers = net.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::with_capacity(n_layers);

    let mut h = x.clone();
    for layer in &net.layers {
        let input = match dropout {
            Some((rate, ref mut rng)) if rate > 0.0 => apply_dropout(&h, rate, rng),
            _ => h,
        };
        let a = match layer {
            Layer::Dense(l) => add_bias_rows(&matmul_nt(&input, &l.w)?, &l.b)?,
            Layer::GraphConv(l) => {
                let hw = matmul(&input, &l.w)?;
                matmul(adj.unwrap().matrix(), &hw)?
            }
        };
        let act = layer.activation();
        let out = a.map(|v| act.apply(v));
        inputs.push(input);
        pre.push(a);
        h = out.clone();
        post.push(out);
    }

    let yhat = softmax_rows(&pre[n_layers - 1]);
    Ok((yhat, ForwardTrace { inputs, pre, post }))
}

fn apply_dropout<T: Element>(h: &Matrix<T>, rate: f64, rng: &mut SplitMix64) -> Matrix<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut out = h.clone();
    for i in 0..out.rows() {
        for v in out.row_mut(i) {
            if rng.next_f64() < rate {
                *v = T::ZERO;
            } else {
                *v *= keep;
            }
        }
    }
    out
}

/// Mean softmax cross-entropy over unmasked rows, plus the matching error
/// signal `e = dL/da_N`: `(yhat - y) / |unmasked|` on unmasked rows, zero on
/// masked rows. Targets must be one-hot.
pub fn loss_and_error<T: Element>(
    yhat: &Matrix<T>,
    y: &Matrix<T>,
    mask: Option<&[bool]>,
) -> Result<(f64, Matrix<T>)> {
    if yhat.shape() != y.shape() {
        return Err(ShapeError::DimMismatch {
            op: "loss_and_error",
            lr: yhat.rows(),
            lc: yhat.cols(),
            rr: y.rows(),
            rc: y.cols(),
        }
        .into());
    }
    if let Some(m) = mask {
        if m.len() != y.rows() {
            return Err(ModelError::MaskLength {
                expected: y.rows(),
                got: m.len(),
            });
        }
    }

    let rows = y.rows();
    let included = |i: usize| mask.map_or(true, |m| m[i]);
    let count = (0..rows).filter(|&i| included(i)).count();
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }

    let mut loss = 0.0f64;
    let mut e = Matrix::zeros(rows, y.cols());
    let inv = T::from_f64(1.0 / count as f64);
    for i in 0..rows {
        let yr = y.row(i);
        let mut target = None;
        for (j, &v) in yr.iter().enumerate() {
            if v == T::ONE {
                if target.replace(j).is_some() {
                    return Err(ModelError::NotOneHot { row: i });
                }
            } else if v != T::ZERO {
                return Err(ModelError::NotOneHot { row: i });
            }
        }
        let target = target.ok_or(ModelError::NotOneHot { row: i })?;
        if !included(i) {
            continue;
        }
        // Clamp underflow away from ln(0) while letting NaN predictions
        // propagate into the loss (f64::max would swallow them).
        let p = yhat.get(i, target).to_f64();
        let clamped = if p < 1e-300 { 1e-300 } else { p };
        loss -= clamped.ln();
        let er = e.row_mut(i);
        for (j, (&p, &t)) in yhat.row(i).iter().zip(yr).enumerate() {
            er[j] = (p - t) * inv;
        }
    }
    Ok((loss / count as f64, e))
}

/// Per-layer parameter gradients, aligned with `net.layers()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients<T> {
    pub d_w: Matrix<T>,
    pub d_b: Option<Vec<T>>,
}

pub type Gradients<T> = Vec<LayerGradients<T>>;

fn check_trace<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<usize> {
    let n_layers = net.layers.len();
    if trace.inputs.len() != n_layers || trace.pre.len() != n_layers {
        return Err(ModelError::StaleTrace {
            index: trace.inputs.len().min(trace.pre.len()),
            want_rows: n_layers,
            want_cols: 0,
            got_rows: trace.inputs.len(),
            got_cols: trace.pre.len(),
        });
    }
    let batch = e.rows();
    for (i, layer) in net.layers.iter().enumerate() {
        let ok = trace.inputs[i].cols() == layer.in_width()
            && trace.pre[i].cols() == layer.out_width()
            && trace.inputs[i].rows() == batch
            && trace.pre[i].rows() == batch;
        if !ok {
            return Err(ModelError::StaleTrace {
                index: i,
                want_rows: batch,
                want_cols: layer.in_width(),
                got_rows: trace.inputs[i].rows(),
                got_cols: trace.inputs[i].cols(),
            });
        }
    }
    if e.cols() != net.out_width() {
        return Err(ModelError::StaleTrace {
            index: n_layers - 1,
            want_rows: batch,
            want_cols: net.out_width(),
            got_rows: e.rows(),
            got_cols: e.cols(),
        });
    }
    Ok(batch)
}

/// Gradient of one layer's parameters given the pre-activation error signal
/// at that layer, plus (optionally) the signal propagated to the previous
/// layer's activations.
fn local_gradients<T: Element>(
    layer: &Layer<T>,
    input: &Matrix<T>,
    signal: &Matrix<T>,
    adj: Option<&NormalizedAdjacency<T>>,
    want_upstream: bool,
) -> Result<(LayerGradients<T>, Option<Matrix<T>>)> {
    match layer {
        Layer::Dense(l) => {
            let d_w = matmul_tn(signal, input)?;
            let d_b = col_sums(signal);
            let upstream = if want_upstream {
                Some(matmul(signal, &l.w)?)
            } else {
                None
            };
            Ok((
                LayerGradients {
                    d_w,
                    d_b: Some(d_b),
                },
                upstream,
            ))
        }
        Layer::GraphConv(l) => {
            // a = adj * h * W  =>  dW = (adj * h)^T s = h^T (adj s),
            // dh = adj s W^T; "adj s" is shared.
            let spread = matmul(adj.unwrap().matrix(), signal)?;
            let d_w = matmul_tn(input, &spread)?;
            let upstream = if want_upstream {
                Some(matmul_nt(&spread, &l.w)?)
            } else {
                None
            };
            Ok((LayerGradients { d_w, d_b: None }, upstream))
        }
    }
}

/// Exact gradients by the chain rule.
pub fn bp_backward<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<Gradients<T>> {
    if net.is_graph() != adj.is_some() {
        return Err(ModelError::AdjacencyMismatch);
    }
    check_trace(net, trace, e)?;
    let n_layers = net.layers.len();
    let mut grads: Vec<Option<LayerGradients<T>>> = (0..n_layers).map(|_| None).collect();

    let mut signal = e.clone();
    for i in (0..n_layers).rev() {
        let (g, upstream) =
            local_gradients(&net.layers[i], &trace.inputs[i], &signal, adj, i > 0)?;
        grads[i] = Some(g);
        if i > 0 {
            let act = net.layers[i - 1].activation();
            let deriv = trace.pre[i - 1].map(|a| act.derivative(a));
            signal = hadamard(&upstream.unwrap(), &deriv)?;
        }
    }
    Ok(grads.into_iter().map(|g| g.unwrap()).collect())
}

/// Feedback backend for [`dfa_backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackBackend {
    /// Exact projection of the raw error (ternarization-free).
    Exact,
    /// Projection of the ternarized error, noiseless.
    Ternary,
    /// Simulated co-processor: ternarized, two acquisitions, read noise.
    Optical,
}

/// Direct feedback alignment: each hidden layer receives its slice of the
/// projected top-layer error as the pre-activation signal; the output layer
/// uses the true error. Rows of `e` project independently (per sample);
/// all-zero rows are never sent to the device, so masked-out rows contribute
/// exactly zero even under read noise.
#[allow(clippy::too_many_arguments)]
pub fn dfa_backward<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    spec: &FeedbackMatrixSpec,
    backend: FeedbackBackend,
    cfg: &OpticalConfig,
    noise_seed: u64,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<Gradients<T>> {
    if net.is_graph() != adj.is_some() {
        return Err(ModelError::AdjacencyMismatch);
    }
    let batch = check_trace(net, trace, e)?;
    let n_layers = net.layers.len();
    for (i, layer) in net.layers[..n_layers - 1].iter().enumerate() {
        if layer.feedback_slice().is_none() {
            return Err(ModelError::MissingFeedbackSlice { index: i });
        }
    }
    if spec.in_dim != e.cols() || spec.out_dim != net.feedback_out_dim() {
        return Err(feedback::FeedbackError::LengthMismatch {
            expected: net.feedback_out_dim(),
            got: spec.out_dim,
        }
        .into());
    }

    // One projected row per sample.
    let projected: Vec<Vec<f64>> = (0..batch)
        .into_par_iter()
        .map(|r| -> std::result::Result<Vec<f64>, feedback::FeedbackError> {
            let row: Vec<f64> = e.row(r).iter().map(|&v| v.to_f64()).collect();
            if row.iter().all(|&v| v == 0.0) {
                return Ok(vec![0.0; spec.out_dim]);
            }
            match backend {
                FeedbackBackend::Exact => feedback::project(spec, &row),
                FeedbackBackend::Ternary => {
                    let t = feedback::ternarize(&row, cfg.threshold)?;
                    feedback::project(spec, &t.values)
                }
                FeedbackBackend::Optical => {
                    let row_seed = mix64(noise_seed ^ (r as u64).wrapping_mul(GOLDEN));
                    feedback::optical_project(spec, &row, cfg, row_seed)
                }
            }
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut grads = Vec::with_capacity(n_layers);
    for (i, layer) in net.layers.iter().enumerate() {
        let signal = if i == n_layers - 1 {
            e.clone()
        } else {
            let slice = layer.feedback_slice().unwrap();
            let act = layer.activation();
            let pre = &trace.pre[i];
            Matrix::from_fn(batch, slice.width, |r, c| {
                T::from_f64(projected[r][slice.offset + c]) * act.derivative(pre.get(r, c))
            })
        };
        let (g, _) = local_gradients(layer, &trace.inputs[i], &signal, adj, false)?;
        grads.push(g);
    }
    Ok(grads)
}

/// Top-layer-only training: the output layer gets its exact gradient, every
/// other gradient is exactly zero.
pub fn shallow_backward<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<Gradients<T>> {
    if net.is_graph() != adj.is_some() {
        return Err(ModelError::AdjacencyMismatch);
    }
    check_trace(net, trace, e)?;
    let n_layers = net.layers.len();
    let mut grads = Vec::with_capacity(n_layers);
    for (i, layer) in net.layers.iter().enumerate() {
        if i == n_layers - 1 {
            let (g, _) = local_gradients(layer, &trace.inputs[i], e, adj, false)?;
            grads.push(g);
        } else {
            grads.push(LayerGradients {
                d_w: Matrix::zeros(layer.weights().rows(), layer.weights().cols()),
                d_b: layer.is_dense().then(|| vec![T::ZERO; layer.out_width()]),
            });
        }
    }
    Ok(grads)
}

/// Fraction of rows where the prediction argmax matches the target argmax,
/// restricted to the mask when given.
pub fn accuracy<T: Element>(
    yhat: &Matrix<T>,
    y: &Matrix<T>,
    mask: Option<&[bool]>,
) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(ShapeError::DimMismatch {
            op: "accuracy",
            lr: yhat.rows(),
            lc: yhat.cols(),
            rr: y.rows(),
            rc: y.cols(),
        }
        .into());
    }
    let pred = argmax_rows(yhat);
    let truth = argmax_rows(y);
    let mut hits = 0usize;
    let mut count = 0usize;
    for i in 0..y.rows() {
        if mask.map_or(true, |m| m[i]) {
            count += 1;
            if pred[i] == truth[i] {
                hits += 1;
            }
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok(hits as f64 / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{FeedbackMatrixSpec, OpticalConfig};
    use crate::linalg::transpose;

    fn rng(seed: u64) -> SplitMix64 {
        SplitMix64::new(seed)
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut r = rng(seed);
        Matrix::from_fn(rows, cols, |_, _| r.next_range(-1.0, 1.0))
    }

    fn one_hot(rows: usize, classes: usize, seed: u64) -> Matrix<f64> {
        let mut r = rng(seed);
        Matrix::from_fn(rows, classes, {
            let targets: Vec<usize> = (0..rows).map(|_| r.next_below(classes)).collect();
            move |i, j| if targets[i] == j { 1.0 } else { 0.0 }
        })
    }

    /// Loss as a pure function of the network parameters, for finite
    /// differences.
    fn loss_of(
        net: &Network<f64>,
        x: &Matrix<f64>,
        y: &Matrix<f64>,
        adj: Option<&NormalizedAdjacency<f64>>,
        mask: Option<&[bool]>,
    ) -> f64 {
        let (yhat, _) = forward(net, x, adj).unwrap();
        loss_and_error(&yhat, y, mask).unwrap().0
    }

    /// Central finite differences over every weight and bias.
    fn numeric_gradients(
        net: &Network<f64>,
        x: &Matrix<f64>,
        y: &Matrix<f64>,
        adj: Option<&NormalizedAdjacency<f64>>,
        mask: Option<&[bool]>,
    ) -> Gradients<f64> {
        let h = 1e-6;
        let mut out = Vec::new();
        for li in 0..net.layers().len() {
            let (rows, cols) = net.layers()[li].weights().shape();
            let mut d_w = Matrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    bump(&mut plus, li, i, j, h);
                    bump(&mut minus, li, i, j, -h);
                    let g = (loss_of(&plus, x, y, adj, mask)
                        - loss_of(&minus, x, y, adj, mask))
                        / (2.0 * h);
                    d_w.set(i, j, g);
                }
            }
            let d_b = match &net.layers()[li] {
                Layer::Dense(l) => {
                    let mut db = vec![0.0; l.b.len()];
                    for (k, slot) in db.iter_mut().enumerate() {
                        let mut plus = net.clone();
                        let mut minus = net.clone();
                        bump_bias(&mut plus, li, k, h);
                        bump_bias(&mut minus, li, k, -h);
                        *slot = (loss_of(&plus, x, y, adj, mask)
                            - loss_of(&minus, x, y, adj, mask))
                            / (2.0 * h);
                    }
                    Some(db)
                }
                Layer::GraphConv(_) => None,
            };
            out.push(LayerGradients { d_w, d_b });
        }
        out
    }

    fn bump(net: &mut Network<f64>, layer: usize, i: usize, j: usize, by: f64) {
        match &mut net.layers_mut()[layer] {
            Layer::Dense(l) => l.w.set(i, j, l.w.get(i, j) + by),
            Layer::GraphConv(l) => l.w.set(i, j, l.w.get(i, j) + by),
        }
    }

    fn bump_bias(net: &mut Network<f64>, layer: usize, k: usize, by: f64) {
        if let Layer::Dense(l) = &mut net.layers_mut()[layer] {
            l.b[k] += by;
        }
    }

    fn assert_grads_close(a: &Gradients<f64>, b: &Gradients<f64>, tol: f64) {
        for (ga, gb) in a.iter().zip(b) {
            for (x, y) in ga.d_w.data().iter().zip(gb.d_w.data()) {
                let scale = 1.0f64.max(x.abs()).max(y.abs());
                assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
            }
            match (&ga.d_b, &gb.d_b) {
                (Some(da), Some(db)) => {
                    for (x, y) in da.iter().zip(db) {
                        let scale = 1.0f64.max(x.abs()).max(y.abs());
                        assert!((x - y).abs() <= tol * scale, "bias {x} vs {y}");
                    }
                }
                (None, None) => {}
                _ => panic!("bias presence mismatch"),
            }
        }
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            for &x in &[-1.3f64, -0.4, 0.2, 0.9, 2.5] {
                // Stay away from relu's kink.
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((act.derivative(x) - fd).abs() < 1e-6, "{act:?} at {x}");
            }
        }
        assert_eq!(Activation::Relu.derivative(0.0f64), 0.0);
    }

    #[test]
    fn forward_identity_layer_is_softmax_of_input() {
        let n = 4;
        let mut layers = Vec::new();
        layers.push(Layer::Dense(DenseLayer {
            w: Matrix::identity(n),
            b: vec![0.0; n],
            activation: Activation::Identity,
            feedback_slice: None,
        }));
        let net = Network::from_layers(layers).unwrap();
        let x = rand_matrix(3, n, 5);
        let (yhat, _) = forward(&net, &x, None).unwrap();
        assert_eq!(yhat, crate::linalg::softmax_rows(&x));
    }

    #[test]
    fn trace_records_h_equals_f_of_a() {
        let net = Network::<f64>::dense(&[5, 7, 6, 3], Activation::Tanh, &mut rng(1)).unwrap();
        let x = rand_matrix(4, 5, 2);
        let (_, trace) = forward(&net, &x, None).unwrap();
        for (i, layer) in net.layers().iter().enumerate() {
            let act = layer.activation();
            let want = trace.pre[i].map(|a| act.apply(a));
            assert_eq!(trace.post[i], want);
        }
    }

    #[test]
    fn adjacency_hand_cases() {
        // No edges: only self-loops, all degrees 1.
        let id = normalized_adjacency::<f64>(&[], 3).unwrap();
        assert_eq!(id.matrix(), &Matrix::identity(3));

        // Two-node path: degrees 2, every entry 0.5.
        let path = normalized_adjacency::<f64>(&[(0, 1)], 2).unwrap();
        for &v in path.matrix().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }

        // Triangle: all degrees 3, all entries 1/3.
        let tri = normalized_adjacency::<f64>(&[(0, 1), (1, 2), (2, 0)], 3).unwrap();
        for &v in tri.matrix().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        // Duplicate and reversed edges count once.
        let dup = normalized_adjacency::<f64>(&[(0, 1), (1, 0), (0, 1)], 2).unwrap();
        assert_eq!(dup.matrix(), path.matrix());

        assert!(normalized_adjacency::<f64>(&[(0, 5)], 3).is_err());
    }

    #[test]
    fn adjacency_is_symmetric_with_bounded_spectrum() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)];
        let adj = normalized_adjacency::<f64>(&edges, 5).unwrap();
        let m = adj.matrix();
        let t = transpose(m);
        for (a, b) in m.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Power iteration: spectral radius of the normalized operator <= 1.
        let mut v = vec![1.0f64; 5];
        for _ in 0..200 {
            let mut next = vec![0.0; 5];
            for i in 0..5 {
                for j in 0..5 {
                    next[i] += m.get(i, j) * v[j];
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in next.iter_mut() {
                *x /= norm;
            }
            v = next;
        }
        let mut mv = vec![0.0; 5];
        for i in 0..5 {
            for j in 0..5 {
                mv[i] += m.get(i, j) * v[j];
            }
        }
        let lambda: f64 = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(lambda.abs() <= 1.0 + 1e-9, "spectral radius {lambda}");
    }

    #[test]
    fn loss_perfect_prediction_is_zero() {
        let y = one_hot(5, 4, 3);
        let (loss, e) = loss_and_error(&y, &y, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_uniform_prediction_is_ln_c() {
        let c = 7;
        let y = one_hot(3, c, 9);
        let yhat = Matrix::from_fn(3, c, |_, _| 1.0 / c as f64);
        let (loss, _) = loss_and_error(&yhat, &y, None).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_non_one_hot() {
        let yhat = Matrix::from_fn(2, 3, |_, _| 1.0 / 3.0);
        let two_ones = Matrix::from_vec(2, 3, vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            loss_and_error(&yhat, &two_ones, None),
            Err(ModelError::NotOneHot { row: 0 })
        ));
        let fractional = Matrix::from_vec(2, 3, vec![0.5, 0.5, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(loss_and_error(&yhat, &fractional, None).is_err());
    }

    #[test]
    fn error_signal_matches_finite_differences_of_loss() {
        // Perturb the pre-activation directly: e must be dL/da_N.
        let a = rand_matrix(3, 5, 11);
        let y = one_hot(3, 5, 12);
        let (_, e) = loss_and_error(&crate::linalg::softmax_rows(&a), &y, None).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap.set(i, j, a.get(i, j) + h);
                am.set(i, j, a.get(i, j) - h);
                let lp = loss_and_error(&crate::linalg::softmax_rows(&ap), &y, None)
                    .unwrap()
                    .0;
                let lm = loss_and_error(&crate::linalg::softmax_rows(&am), &y, None)
                    .unwrap()
                    .0;
                let fd = (lp - lm) / (2.0 * h);
                assert!((e.get(i, j) - fd).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn bp_zero_error_gives_zero_gradients() {
        let net = Network::<f64>::dense(&[4, 6, 3], Activation::Tanh, &mut rng(7)).unwrap();
        let x = rand_matrix(2, 4, 8);
        let (_, trace) = forward(&net, &x, None).unwrap();
        let e = Matrix::zeros(2, 3);
        let grads = bp_backward(&net, &trace, &e, None).unwrap();
        for g in grads {
            assert!(g.d_w.data().iter().all(|&v| v == 0.0));
            assert!(g.d_b.unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bp_matches_finite_differences_dense() {
        let net = Network::<f64>::dense(&[5, 8, 6, 4], Activation::Tanh, &mut rng(21)).unwrap();
        let x = rand_matrix(3, 5, 22);
        let y = one_hot(3, 4, 23);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let analytic = bp_backward(&net, &trace, &e, None).unwrap();
        let numeric = numeric_gradients(&net, &x, &y, None, None);
        assert_grads_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn bp_matches_finite_differences_graph_masked() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)];
        let adj = normalized_adjacency::<f64>(&edges, 6).unwrap();
        let net = Network::<f64>::graph_conv(&[4, 5, 3], Activation::Tanh, &mut rng(31)).unwrap();
        let x = rand_matrix(6, 4, 32);
        let y = one_hot(6, 3, 33);
        let mask = vec![true, false, true, true, false, false];
        let (yhat, trace) = forward(&net, &x, Some(&adj)).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, Some(&mask)).unwrap();
        let analytic = bp_backward(&net, &trace, &e, Some(&adj)).unwrap();
        let numeric = numeric_gradients(&net, &x, &y, Some(&adj), Some(&mask));
        assert_grads_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn one_layer_gradient_is_error_times_input() {
        let net = Network::<f64>::dense(&[4, 3], Activation::Tanh, &mut rng(41)).unwrap();
        let x = rand_matrix(2, 4, 42);
        let y = one_hot(2, 3, 43);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let grads = bp_backward(&net, &trace, &e, None).unwrap();
        let want = matmul_tn(&e, &x).unwrap();
        assert_eq!(grads[0].d_w, want);
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        // Flipping a masked row's label must not change any gradient.
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3)];
        let adj = normalized_adjacency::<f64>(&edges, 4).unwrap();
        let net = Network::<f64>::graph_conv(&[3, 4, 2], Activation::Relu, &mut rng(51)).unwrap();
        let x = rand_matrix(4, 3, 52);
        let mask = vec![true, true, false, false];
        let (yhat, trace) = forward(&net, &x, Some(&adj)).unwrap();

        let y1 = one_hot(4, 2, 53);
        let mut y2 = y1.clone();
        for j in 0..2 {
            y2.set(3, j, 1.0 - y1.get(3, j));
        }
        let (_, e1) = loss_and_error(&yhat, &y1, Some(&mask)).unwrap();
        let (_, e2) = loss_and_error(&yhat, &y2, Some(&mask)).unwrap();
        assert_eq!(e1, e2);
        let g1 = bp_backward(&net, &trace, &e1, Some(&adj)).unwrap();
        let g2 = bp_backward(&net, &trace, &e2, Some(&adj)).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.d_w, b.d_w);
        }
    }

    #[test]
    fn dfa_matches_materialized_oracle() {
        // One hidden layer, exact backend: dW1 = [(B1 e) o f'(a1)] h0^T.
        let net = Network::<f64>::dense(&[4, 6, 3], Activation::Tanh, &mut rng(61)).unwrap();
        let x = rand_matrix(5, 4, 62);
        let y = one_hot(5, 3, 63);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let spec = net.feedback_spec(777);
        let cfg = OpticalConfig::new(0.0, 1e-3);
        let grads =
            dfa_backward(&net, &trace, &e, &spec, FeedbackBackend::Exact, &cfg, 0, None).unwrap();

        let b = spec.materialize();
        let mut want = Matrix::<f64>::zeros(6, 4);
        for r in 0..5 {
            for i in 0..6 {
                let proj: f64 = (0..3).map(|j| b[i][j] * e.get(r, j)).sum();
                let sig = proj * Activation::Tanh.derivative(trace.pre[0].get(r, i));
                for k in 0..4 {
                    want.set(i, k, want.get(i, k) + sig * x.get(r, k));
                }
            }
        }
        for (g, w) in grads[0].d_w.data().iter().zip(want.data()) {
            let scale = 1.0f64.max(w.abs());
            assert!((g - w).abs() <= 1e-12 * scale, "{g} vs {w}");
        }
    }

    #[test]
    fn dfa_output_layer_bit_equals_bp() {
        let net = Network::<f64>::dense(&[5, 7, 4], Activation::Relu, &mut rng(71)).unwrap();
        let x = rand_matrix(3, 5, 72);
        let y = one_hot(3, 4, 73);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let spec = net.feedback_spec(1);
        let cfg = OpticalConfig::new(0.05, 1e-3);
        let bp = bp_backward(&net, &trace, &e, None).unwrap();
        for backend in [
            FeedbackBackend::Exact,
            FeedbackBackend::Ternary,
            FeedbackBackend::Optical,
        ] {
            let dfa = dfa_backward(&net, &trace, &e, &spec, backend, &cfg, 5, None).unwrap();
            assert_eq!(dfa[1].d_w, bp[1].d_w);
            assert_eq!(dfa[1].d_b, bp[1].d_b);
        }
        let sh = shallow_backward(&net, &trace, &e, None).unwrap();
        assert_eq!(sh[1].d_w, bp[1].d_w);
    }

    #[test]
    fn ternary_threshold_above_error_zeroes_hidden_updates() {
        let net = Network::<f64>::dense(&[4, 5, 3], Activation::Tanh, &mut rng(81)).unwrap();
        let x = rand_matrix(4, 4, 82);
        let y = one_hot(4, 3, 83);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let tau = e.max_abs() * 2.0 + 1.0;
        let spec = net.feedback_spec(2);
        let cfg = OpticalConfig::new(0.0, tau);
        let grads =
            dfa_backward(&net, &trace, &e, &spec, FeedbackBackend::Ternary, &cfg, 0, None)
                .unwrap();
        assert!(grads[0].d_w.data().iter().all(|&v| v == 0.0));
        assert!(grads[1].d_w.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dfa_graph_uses_aggregated_input() {
        // dW for a graph-conv layer must equal (adj h)^T signal.
        let edges = [(0, 1), (1, 2), (0, 2), (2, 3)];
        let adj = normalized_adjacency::<f64>(&edges, 4).unwrap();
        let net = Network::<f64>::graph_conv(&[3, 5, 2], Activation::Relu, &mut rng(91)).unwrap();
        let x = rand_matrix(4, 3, 92);
        let y = one_hot(4, 2, 93);
        let (yhat, trace) = forward(&net, &x, Some(&adj)).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let spec = net.feedback_spec(3);
        let cfg = OpticalConfig::new(0.0, 1e-4);
        let grads = dfa_backward(
            &net,
            &trace,
            &e,
            &spec,
            FeedbackBackend::Exact,
            &cfg,
            0,
            Some(&adj),
        )
        .unwrap();

        let b = spec.materialize();
        let mut signal = Matrix::<f64>::zeros(4, 5);
        for r in 0..4 {
            for i in 0..5 {
                let proj: f64 = (0..2).map(|j| b[i][j] * e.get(r, j)).sum();
                signal.set(
                    r,
                    i,
                    proj * Activation::Relu.derivative(trace.pre[0].get(r, i)),
                );
            }
        }
        let ah = matmul(adj.matrix(), &x).unwrap();
        let want = matmul_tn(&ah, &signal).unwrap();
        for (g, w) in grads[0].d_w.data().iter().zip(want.data()) {
            let scale = 1.0f64.max(w.abs());
            assert!((g - w).abs() <= 1e-9 * scale, "{g} vs {w}");
        }
    }

    #[test]
    fn shallow_cases() {
        let net = Network::<f64>::dense(&[4, 6, 6, 3], Activation::Tanh, &mut rng(101)).unwrap();
        let x = rand_matrix(3, 4, 102);
        let y = one_hot(3, 3, 103);
        let (yhat, trace) = forward(&net, &x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let sh = shallow_backward(&net, &trace, &e, None).unwrap();
        assert!(sh[0].d_w.data().iter().all(|&v| v == 0.0));
        assert!(sh[1].d_w.data().iter().all(|&v| v == 0.0));
        let bp = bp_backward(&net, &trace, &e, None).unwrap();
        assert_eq!(sh[2].d_w, bp[2].d_w);
        assert_eq!(sh[2].d_b, bp[2].d_b);

        // Degenerate single-layer network: shallow is exactly bp.
        let one = Network::<f64>::dense(&[4, 3], Activation::Tanh, &mut rng(104)).unwrap();
        let (yh, tr) = forward(&one, &x, None).unwrap();
        let (_, e1) = loss_and_error(&yh, &y, None).unwrap();
        let s = shallow_backward(&one, &tr, &e1, None).unwrap();
        let b = bp_backward(&one, &tr, &e1, None).unwrap();
        assert_eq!(s[0].d_w, b[0].d_w);
        assert_eq!(s[0].d_b, b[0].d_b);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let net = Network::<f64>::dense(&[4, 6, 3], Activation::Tanh, &mut rng(111)).unwrap();
        let other = Network::<f64>::dense(&[4, 5, 3], Activation::Tanh, &mut rng(112)).unwrap();
        let x = rand_matrix(2, 4, 113);
        let (_, trace) = forward(&other, &x, None).unwrap();
        let e = Matrix::zeros(2, 3);
        assert!(matches!(
            bp_backward(&net, &trace, &e, None),
            Err(ModelError::StaleTrace { .. })
        ));
    }

    #[test]
    fn adjacency_presence_is_enforced() {
        let dense = Network::<f64>::dense(&[3, 4, 2], Activation::Tanh, &mut rng(121)).unwrap();
        let adj = normalized_adjacency::<f64>(&[(0, 1)], 2).unwrap();
        let x = rand_matrix(2, 3, 122);
        assert!(matches!(
            forward(&dense, &x, Some(&adj)),
            Err(ModelError::AdjacencyMismatch)
        ));
        let graph = Network::<f64>::graph_conv(&[3, 4, 2], Activation::Relu, &mut rng(123)).unwrap();
        assert!(matches!(
            forward(&graph, &x, None),
            Err(ModelError::AdjacencyMismatch)
        ));
    }

    #[test]
    fn dropout_trace_stays_consistent_for_backward() {
        // Gradients computed from a dropped-out trace match finite
        // differences of the equivalent deterministic network (dropout
        // folded into the recorded inputs).
        let net = Network::<f64>::dense(&[4, 6, 3], Activation::Tanh, &mut rng(131)).unwrap();
        let x = rand_matrix(5, 4, 132);
        let mut d_rng = rng(133);
        let (yhat, trace) = forward_with(&net, &x, None, Some((0.4, &mut d_rng))).unwrap();
        let y = one_hot(5, 3, 134);
        let (_, e) = loss_and_error(&yhat, &y, None).unwrap();
        let grads = bp_backward(&net, &trace, &e, None).unwrap();

        // Layer-1 gradient recomputed against the recorded (post-dropout)
        // input; layer 0 sees the dropped x recorded in the trace.
        let act = Activation::Tanh;
        let deriv = trace.pre[0].map(|a| act.derivative(a));
        let upstream = matmul(&e, net.layers()[1].weights()).unwrap();
        let sig0 = hadamard(&upstream, &deriv).unwrap();
        let want0 = matmul_tn(&sig0, &trace.inputs[0]).unwrap();
        assert_eq!(grads[0].d_w, want0);
        assert_ne!(trace.inputs[1], trace.post[0], "dropout must alter inputs");
    }

    #[test]
    fn accuracy_cases() {
        let y = one_hot(4, 3, 141);
        assert_eq!(accuracy(&y, &y, None).unwrap(), 1.0);

        let two = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let flipped = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(accuracy(&flipped, &two, None).unwrap(), 0.0);

        let yhat = Matrix::from_vec(
            4,
            2,
            vec![0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.6, 0.4],
        )
        .unwrap();
        let t = Matrix::from_vec(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&yhat, &t, None).unwrap(), 0.75);
    }
}
