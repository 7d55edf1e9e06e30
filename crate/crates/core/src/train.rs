//! Training loop: SGD with momentum over any of the five training modes,
//! deterministic seeding, per-epoch metrics, and the DFA/BP alignment
//! diagnostic.

use crate::data::{mask_count, Dataset};
use crate::feedback::{FeedbackMatrixSpec, OpticalConfig};
use crate::linalg::{Element, Matrix};
use crate::models::{
    accuracy, bp_backward, dfa_backward, forward, forward_with, loss_and_error,
    normalized_adjacency, shallow_backward, Activation, FeedbackBackend, ForwardTrace, Gradients,
    Layer, ModelError, Network, NormalizedAdjacency,
};
use crate::rng::{mix64, SplitMix64};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("graph networks train on graph datasets and dense networks on tabular ones")]
    DatasetKindMismatch,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch}, step {step} (max |W| = {max_abs_weight:.3e})")]
    NanLoss {
        epoch: usize,
        step: usize,
        max_abs_weight: f64,
    },
    #[error("evaluation mask is empty")]
    EmptyMask,
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// The five training modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Bp,
    Dfa,
    DfaTernary,
    DfaOptical,
    Shallow,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Bp,
        Mode::Dfa,
        Mode::DfaTernary,
        Mode::DfaOptical,
        Mode::Shallow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bp => "bp",
            Mode::Dfa => "dfa",
            Mode::DfaTernary => "dfa-ternary",
            Mode::DfaOptical => "dfa-optical",
            Mode::Shallow => "shallow",
        }
    }

    /// Feedback backend for the DFA family; `None` for bp/shallow.
    pub fn backend(self) -> Option<FeedbackBackend> {
        match self {
            Mode::Dfa => Some(FeedbackBackend::Exact),
            Mode::DfaTernary => Some(FeedbackBackend::Ternary),
            Mode::DfaOptical => Some(FeedbackBackend::Optical),
            Mode::Bp | Mode::Shallow => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bp" => Ok(Mode::Bp),
            "dfa" => Ok(Mode::Dfa),
            "dfa-ternary" => Ok(Mode::DfaTernary),
            "dfa-optical" => Ok(Mode::DfaOptical),
            "shallow" => Ok(Mode::Shallow),
            other => Err(format!(
                "unknown mode {other:?}; valid modes: bp, dfa, dfa-ternary, dfa-optical, shallow"
            )),
        }
    }
}

/// Everything a run needs beyond the network and data. All randomness flows
/// from the four seeds (dropout masks derive from `shuffle_seed`), so a
/// fixed config reproduces final weights bit-for-bit on one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Rows per step; ignored for graph datasets (always full batch).
    pub batch_size: usize,
    pub weight_seed: u64,
    pub feedback_seed: u64,
    pub noise_seed: u64,
    pub shuffle_seed: u64,
    pub ternary_threshold: f64,
    pub noise_std: f64,
    /// Input dropout rate (graph networks).
    pub dropout: f64,
    /// Decoupled L2 on weights (graph networks).
    pub weight_decay: f64,
    /// Record per-epoch DFA/BP alignment cosines (DFA modes only).
    pub alignment_diagnostics: bool,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            mode,
            lr: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 128,
            weight_seed: 1,
            feedback_seed: 2,
            noise_seed: 3,
            shuffle_seed: 4,
            ternary_threshold: 1e-3,
            noise_std: 0.05,
            dropout: 0.0,
            weight_decay: 0.0,
            alignment_diagnostics: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be non-negative and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std must be non-negative");
        }
        if self.ternary_threshold <= 0.0 {
            return bad("ternary threshold must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    fn optical(&self) -> OpticalConfig {
        OpticalConfig::new(self.noise_std, self.ternary_threshold)
    }
}

/// Architecture plus config making up a task's starting point.
#[derive(Debug, Clone)]
pub struct TaskDefaults {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub config: TrainConfig,
}

/// Hand-tuned defaults for the FC-MNIST benchmark (784-2048-2048-10, tanh).
pub fn mnist_defaults(mode: Mode) -> TaskDefaults {
    let mut config = TrainConfig::new(mode);
    config.lr = 0.05;
    config.momentum = 0.9;
    config.epochs = 15;
    config.batch_size = 128;
    config.ternary_threshold = 1e-3;
    config.noise_std = 0.05;
    TaskDefaults {
        dims: vec![784, 2048, 2048, 10],
        activation: Activation::Tanh,
        config,
    }
}

/// Hand-tuned defaults for the Cora graph-convolution benchmark
/// (1433-32-7, relu, dropout, weight decay).
pub fn cora_defaults(mode: Mode) -> TaskDefaults {
    let mut config = TrainConfig::new(mode);
    config.lr = 0.01;
    config.momentum = 0.9;
    config.epochs = 200;
    config.batch_size = 2708;
    config.ternary_threshold = 1e-4;
    config.noise_std = 0.05;
    config.dropout = 0.5;
    config.weight_decay = 5e-4;
    TaskDefaults {
        dims: vec![1433, 32, 7],
        activation: Activation::Relu,
        config,
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Mean DFA/BP weight-update cosine per hidden layer; `None` entries
    /// mark zero-norm (undefined) updates.
    pub alignment: Option<Vec<Option<f64>>>,
    pub seconds: f64,
}

struct Velocity<T> {
    w: Matrix<T>,
    b: Option<Vec<T>>,
}

fn zero_velocity<T: Element>(net: &Network<T>) -> Vec<Velocity<T>> {
    net.layers()
        .iter()
        .map(|layer| Velocity {
            w: Matrix::zeros(layer.weights().rows(), layer.weights().cols()),
            b: match layer {
                Layer::Dense(l) => Some(vec![T::ZERO; l.b.len()]),
                Layer::GraphConv(_) => None,
            },
        })
        .collect()
}

/// `v <- momentum v + grad; W <- W - lr v`, plus decoupled weight decay on
/// weights when configured. Biases follow the same rule without decay.
fn apply_update<T: Element>(
    net: &mut Network<T>,
    velocity: &mut [Velocity<T>],
    grads: &Gradients<T>,
    config: &TrainConfig,
) -> Result<()> {
    let lr = T::from_f64(config.lr);
    let momentum = T::from_f64(config.momentum);
    let decay = T::from_f64(config.lr * config.weight_decay);
    for ((layer, vel), grad) in net.layers_mut().iter_mut().zip(velocity).zip(grads) {
        vel.w.scale_inplace(momentum);
        vel.w.axpy_inplace(T::ONE, &grad.d_w).map_err(ModelError::from)?;
        let (w, b) = match layer {
            Layer::Dense(l) => (&mut l.w, Some(&mut l.b)),
            Layer::GraphConv(l) => (&mut l.w, None),
        };
        w.axpy_inplace(-lr, &vel.w).map_err(ModelError::from)?;
        if config.weight_decay > 0.0 {
            w.scale_inplace(T::ONE - decay);
        }
        if let (Some(b), Some(vb), Some(gb)) = (b, vel.b.as_mut(), grad.d_b.as_ref()) {
            for ((bv, vv), &gv) in b.iter_mut().zip(vb).zip(gb) {
                *vv = momentum * *vv + gv;
                *bv -= lr * *vv;
            }
        }
    }
    Ok(())
}

fn backward_for_mode<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    config: &TrainConfig,
    spec: &FeedbackMatrixSpec,
    step_noise_seed: u64,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<Gradients<T>> {
    let grads = match config.mode.backend() {
        Some(backend) => dfa_backward(
            net,
            trace,
            e,
            spec,
            backend,
            &config.optical(),
            step_noise_seed,
            adj,
        )?,
        None => match config.mode {
            Mode::Bp => bp_backward(net, trace, e, adj)?,
            Mode::Shallow => shallow_backward(net, trace, e, adj)?,
            _ => unreachable!(),
        },
    };
    Ok(grads)
}

fn max_abs_weights<T: Element>(net: &Network<T>) -> f64 {
    net.layers()
        .iter()
        .map(|l| l.weights().max_abs())
        .fold(0.0, f64::max)
}

/// Train in place, emitting one [`EpochReport`] per epoch (returned and
/// streamed through `on_epoch`). A non-finite loss aborts with a diagnostic
/// snapshot in the error.
pub fn train<T: Element>(
    net: &mut Network<T>,
    dataset: &Dataset<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    config.validate()?;
    if net.is_graph() != dataset.is_graph() {
        return Err(TrainError::DatasetKindMismatch);
    }

    let adj = match dataset {
        Dataset::Graph(g) => Some(normalized_adjacency::<T>(&g.edges, g.n)?),
        Dataset::Tabular(_) => None,
    };
    let data = dataset.labeled();
    let spec = net.feedback_spec(config.feedback_seed);

    let train_idx: Vec<usize> = (0..data.n_samples())
        .filter(|&i| data.train_mask[i])
        .collect();
    if train_idx.is_empty() {
        return Err(TrainError::EmptyMask);
    }

    let mut velocity = zero_velocity(net);
    let mut reports = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut shuffle_rng = SplitMix64::new(config.shuffle_seed).derive(epoch as u64);
        let mut dropout_rng = SplitMix64::new(config.shuffle_seed)
            .derive(0xd20)
            .derive(epoch as u64);

        let mut loss_sum = 0.0f64;
        let mut loss_rows = 0usize;

        if dataset.is_graph() {
            // Full-batch step with the training mask.
            let step_seed = step_noise_seed(config.noise_seed, epoch, 0);
            let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut dropout_rng));
            let (yhat, trace) = forward_with(net, &data.x, adj.as_ref(), dropout)?;
            let (loss, e) = loss_and_error(&yhat, &data.y, Some(&data.train_mask))?;
            if !loss.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    step: 0,
                    max_abs_weight: max_abs_weights(net),
                });
            }
            let grads =
                backward_for_mode(net, &trace, &e, config, &spec, step_seed, adj.as_ref())?;
            apply_update(net, &mut velocity, &grads, config)?;
            loss_sum = loss;
            loss_rows = 1;
        } else {
            let mut order = train_idx.clone();
            shuffle_rng.shuffle(&mut order);
            for (step, chunk) in order.chunks(config.batch_size).enumerate() {
                let bx = data.x.select_rows(chunk);
                let by = data.y.select_rows(chunk);
                let step_seed = step_noise_seed(config.noise_seed, epoch, step);
                let dropout =
                    (config.dropout > 0.0).then_some((config.dropout, &mut dropout_rng));
                let (yhat, trace) = forward_with(net, &bx, adj.as_ref(), dropout)?;
                let (loss, e) = loss_and_error(&yhat, &by, None)?;
                if !loss.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch,
                        step,
                        max_abs_weight: max_abs_weights(net),
                    });
                }
                let grads =
                    backward_for_mode(net, &trace, &e, config, &spec, step_seed, adj.as_ref())?;
                apply_update(net, &mut velocity, &grads, config)?;
                loss_sum += loss * chunk.len() as f64;
                loss_rows += chunk.len();
            }
        }

        let alignment = if config.alignment_diagnostics && config.mode.backend().is_some() {
            Some(alignment_probe(net, data, config, &spec, adj.as_ref(), epoch)?)
        } else {
            None
        };

        let train_acc = evaluate_masked(net, data, &data.train_mask, adj.as_ref())?;
        let val_acc = if mask_count(&data.val_mask) > 0 {
            Some(evaluate_masked(net, data, &data.val_mask, adj.as_ref())?)
        } else {
            None
        };
        let test_acc = if mask_count(&data.test_mask) > 0 {
            Some(evaluate_masked(net, data, &data.test_mask, adj.as_ref())?)
        } else {
            None
        };

        let report = EpochReport {
            epoch,
            train_loss: loss_sum / loss_rows.max(1) as f64,
            train_acc,
            val_acc,
            test_acc,
            alignment,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(reports)
}

fn step_noise_seed(noise_seed: u64, epoch: usize, step: usize) -> u64 {
    mix64(noise_seed ^ mix64(((epoch as u64) << 32) | step as u64))
}

/// Accuracy of `net` on the masked rows of `dataset`.
pub fn evaluate<T: Element>(net: &Network<T>, dataset: &Dataset<T>, mask: &[bool]) -> Result<f64> {
    if net.is_graph() != dataset.is_graph() {
        return Err(TrainError::DatasetKindMismatch);
    }
    let adj = match dataset {
        Dataset::Graph(g) => Some(normalized_adjacency::<T>(&g.edges, g.n)?),
        Dataset::Tabular(_) => None,
    };
    evaluate_masked(net, dataset.labeled(), mask, adj.as_ref())
}

fn evaluate_masked<T: Element>(
    net: &Network<T>,
    data: &crate::data::LabeledDataset<T>,
    mask: &[bool],
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<f64> {
    if mask_count(mask) == 0 {
        return Err(TrainError::EmptyMask);
    }
    if adj.is_some() {
        // Full-graph forward; mask applied at scoring.
        let (yhat, _) = forward(net, &data.x, adj)?;
        return Ok(accuracy(&yhat, &data.y, Some(mask))?);
    }
    const EVAL_BATCH: usize = 1024;
    let idx: Vec<usize> = (0..data.n_samples()).filter(|&i| mask[i]).collect();
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let bx = data.x.select_rows(chunk);
        let by = data.y.select_rows(chunk);
        let (yhat, _) = forward(net, &bx, None)?;
        hits += (accuracy(&yhat, &by, None)? * chunk.len() as f64).round() as usize;
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Cosine between two gradient sets' flattened weight updates, one value
/// per hidden layer. Zero-norm updates report `None`.
pub fn update_cosines<T: Element>(
    a: &Gradients<T>,
    b: &Gradients<T>,
) -> Vec<Option<f64>> {
    let hidden = a.len().saturating_sub(1);
    (0..hidden)
        .map(|i| {
            let dot = a[i].d_w.flat_dot_f64(&b[i].d_w).ok()?;
            let na = a[i].d_w.flat_dot_f64(&a[i].d_w).ok()?.sqrt();
            let nb = b[i].d_w.flat_dot_f64(&b[i].d_w).ok()?.sqrt();
            if na == 0.0 || nb == 0.0 {
                None
            } else {
                Some(dot / (na * nb))
            }
        })
        .collect()
}

/// Per-hidden-layer cosine between this config's DFA update and the exact
/// BP update for the same forward trace.
pub fn alignment<T: Element>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    spec: &FeedbackMatrixSpec,
    config: &TrainConfig,
    adj: Option<&NormalizedAdjacency<T>>,
) -> Result<Vec<Option<f64>>> {
    let backend = config
        .mode
        .backend()
        .ok_or_else(|| TrainError::BadConfig("alignment needs a DFA mode".into()))?;
    let probe_seed = mix64(config.noise_seed ^ 0xa11a);
    let dfa = dfa_backward(
        net,
        trace,
        e,
        spec,
        backend,
        &config.optical(),
        probe_seed,
        adj,
    )?;
    let bp = bp_backward(net, trace, e, adj)?;
    Ok(update_cosines(&dfa, &bp))
}

/// Deterministic per-epoch alignment measurement on the first training rows.
fn alignment_probe<T: Element>(
    net: &Network<T>,
    data: &crate::data::LabeledDataset<T>,
    config: &TrainConfig,
    spec: &FeedbackMatrixSpec,
    adj: Option<&NormalizedAdjacency<T>>,
    _epoch: usize,
) -> Result<Vec<Option<f64>>> {
    if adj.is_some() {
        let (yhat, trace) = forward(net, &data.x, adj)?;
        let (_, e) = loss_and_error(&yhat, &data.y, Some(&data.train_mask))?;
        return alignment(net, &trace, &e, spec, config, adj);
    }
    let idx: Vec<usize> = (0..data.n_samples())
        .filter(|&i| data.train_mask[i])
        .take(config.batch_size)
        .collect();
    let bx = data.x.select_rows(&idx);
    let by = data.y.select_rows(&idx);
    let (yhat, trace) = forward(net, &bx, None)?;
    let (_, e) = loss_and_error(&yhat, &by, None)?;
    alignment(net, &trace, &e, spec, config, adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_blobs;

    fn blob_dataset() -> Dataset<f64> {
        Dataset::Tabular(two_blobs::<f64>(32, 4, 11))
    }

    fn small_config(mode: Mode) -> TrainConfig {
        let mut c = TrainConfig::new(mode);
        c.lr = 0.5;
        c.momentum = 0.9;
        c.epochs = 5;
        c.batch_size = 16;
        c
    }

    fn blob_net(seed: u64) -> Network<f64> {
        Network::dense(&[4, 8, 2], Activation::Tanh, &mut SplitMix64::new(seed)).unwrap()
    }

    #[test]
    fn shallow_leaves_hidden_weights_untouched() {
        let data = blob_dataset();
        let mut net = blob_net(1);
        let before = net.layers()[0].weights().clone();
        train(&mut net, &data, &small_config(Mode::Shallow), |_| {}).unwrap();
        assert_eq!(net.layers()[0].weights(), &before);
        // but the top layer moved
        assert_ne!(
            net.layers()[1].weights().data(),
            blob_net(1).layers()[1].weights().data()
        );
    }

    #[test]
    fn zero_lr_changes_nothing_but_reports_flow() {
        let data = blob_dataset();
        let mut net = blob_net(2);
        let before = net.clone();
        let mut cfg = small_config(Mode::Bp);
        cfg.lr = 0.0;
        cfg.epochs = 3;
        let mut streamed = 0;
        let reports = train(&mut net, &data, &cfg, |_| streamed += 1).unwrap();
        assert_eq!(net, before);
        assert_eq!(reports.len(), 3);
        assert_eq!(streamed, 3);
    }

    #[test]
    fn bp_solves_linearly_separable_blobs() {
        let data = blob_dataset();
        let mut net = blob_net(3);
        let mut cfg = small_config(Mode::Bp);
        // 64 samples / 16 per batch = 4 steps per epoch; 50 epochs = 200 steps.
        cfg.epochs = 50;
        let reports = train(&mut net, &data, &cfg, |_| {}).unwrap();
        assert_eq!(reports.last().unwrap().train_acc, 1.0);
    }

    #[test]
    fn dfa_modes_also_learn_blobs() {
        for mode in [Mode::Dfa, Mode::DfaTernary, Mode::DfaOptical] {
            let data = blob_dataset();
            let mut net = blob_net(4);
            let mut cfg = small_config(mode);
            cfg.epochs = 50;
            cfg.ternary_threshold = 1e-4;
            let reports = train(&mut net, &data, &cfg, |_| {}).unwrap();
            let acc = reports.last().unwrap().train_acc;
            assert!(acc >= 0.95, "{mode}: {acc}");
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = blob_dataset();
        let cfg = small_config(Mode::DfaOptical);
        let mut a = blob_net(5);
        let mut b = blob_net(5);
        let ra = train(&mut a, &data, &cfg, |_| {}).unwrap();
        let rb = train(&mut b, &data, &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.train_acc.to_bits(), y.train_acc.to_bits());
        }
        // A different seed must diverge.
        let mut c = blob_net(5);
        let mut cfg2 = cfg.clone();
        cfg2.shuffle_seed ^= 1;
        train(&mut c, &data, &cfg2, |_| {}).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nan_loss_aborts_with_snapshot() {
        // A non-finite activation anywhere must surface as a NanLoss abort
        // carrying the diagnostic snapshot, not train on silently.
        let mut blobs = two_blobs::<f64>(32, 4, 11);
        blobs.x.set(0, 0, f64::NAN);
        let data = Dataset::Tabular(blobs);
        let mut net = blob_net(6);
        let mut cfg = small_config(Mode::Bp);
        cfg.epochs = 3;
        match train(&mut net, &data, &cfg, |_| {}) {
            Err(TrainError::NanLoss {
                epoch,
                step,
                max_abs_weight,
            }) => {
                assert_eq!(epoch, 0);
                let _ = step;
                assert!(max_abs_weight.is_finite());
            }
            other => panic!("expected NanLoss, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_rejects_empty_mask() {
        let data = blob_dataset();
        let net = blob_net(7);
        let empty = vec![false; data.labeled().n_samples()];
        assert!(matches!(
            evaluate(&net, &data, &empty),
            Err(TrainError::EmptyMask)
        ));
    }

    #[test]
    fn self_cosine_is_one_orthogonal_is_zero() {
        let data = blob_dataset();
        let net = blob_net(8);
        let d = data.labeled();
        let (yhat, trace) = forward(&net, &d.x, None).unwrap();
        let (_, e) = loss_and_error(&yhat, &d.y, None).unwrap();
        let bp = bp_backward(&net, &trace, &e, None).unwrap();
        // Oracle wiring: feed the exact chain as both sides.
        let cos = update_cosines(&bp, &bp);
        assert_eq!(cos.len(), 1);
        assert!((cos[0].unwrap() - 1.0).abs() < 1e-9);

        // Hand-built orthogonal updates.
        let mk = |v: Vec<f64>| crate::models::LayerGradients {
            d_w: Matrix::from_vec(2, 2, v).unwrap(),
            d_b: None,
        };
        let a = vec![mk(vec![1.0, 0.0, 0.0, 0.0]), mk(vec![0.0; 4])];
        let b = vec![mk(vec![0.0, 1.0, 0.0, 0.0]), mk(vec![0.0; 4])];
        let cos = update_cosines(&a, &b);
        assert_eq!(cos[0], Some(0.0));

        // Zero-norm updates are undefined, not a crash.
        let z = vec![mk(vec![0.0; 4]), mk(vec![0.0; 4])];
        let cos = update_cosines(&z, &a);
        assert_eq!(cos[0], None);
    }

    #[test]
    fn alignment_diagnostics_are_recorded_and_positive_on_blobs() {
        let data = blob_dataset();
        let mut net = blob_net(9);
        let mut cfg = small_config(Mode::Dfa);
        cfg.alignment_diagnostics = true;
        cfg.epochs = 8;
        let reports = train(&mut net, &data, &cfg, |_| {}).unwrap();
        let last = reports.last().unwrap().alignment.as_ref().unwrap();
        assert_eq!(last.len(), 1);
        assert!(last[0].unwrap() > 0.0, "alignment {last:?}");
    }

    #[test]
    fn dataset_kind_mismatch_is_rejected() {
        let data = blob_dataset();
        let mut gnet =
            Network::<f64>::graph_conv(&[4, 8, 2], Activation::Relu, &mut SplitMix64::new(1))
                .unwrap();
        assert!(matches!(
            train(&mut gnet, &data, &small_config(Mode::Bp), |_| {}),
            Err(TrainError::DatasetKindMismatch)
        ));
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in Mode::ALL {
            assert_eq!(mode.as_str().parse::<Mode>().unwrap(), mode);
        }
        let err = "sgd".parse::<Mode>().unwrap_err();
        assert!(err.contains("bp") && err.contains("dfa-optical") && err.contains("shallow"));
    }
}
