//! Two-layer GCN node classifier and its structure-free MLP counterpart.
//!
//! Forward pass: `logits = P · relu(P · X · W0 + b0) · W1 + b1`, where `P` is
//! the normalized adjacency for the GCN and the identity for the MLP. Because
//! `P · X` does not depend on the parameters it is computed once per training
//! run. Gradients are derived by hand; `P` is symmetric so back-propagating
//! through it is another multiplication by `P`.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeSplit, NormalizedAdjacency};
use crate::optim::Adam;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("loss mask is empty")]
    EmptyMask,
    #[error("label {label} of node {node} is outside 0..{classes}")]
    BadLabel { node: usize, label: usize, classes: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
}

/// Weights of both layers. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

impl GcnParams {
    pub fn zeros(in_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w0: Array2::zeros((in_dim, hidden)),
            b0: Array1::zeros(hidden),
            w1: Array2::zeros((hidden, classes)),
            b1: Array1::zeros(classes),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = rng::derived(seed, "gcn_init");
        let mut p = Self::zeros(in_dim, hidden, classes);
        let a0 = (6.0 / (in_dim + hidden) as f64).sqrt();
        p.w0.mapv_inplace(|_| rng.gen_range(-a0..a0));
        let a1 = (6.0 / (hidden + classes) as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.gen_range(-a1..a1));
        p
    }

    pub fn in_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w1.ncols()
    }

    fn check(&self, x: &Array2<f64>, adj: Option<&NormalizedAdjacency>) -> Result<(), TrainError> {
        if x.ncols() != self.in_dim() {
            return Err(TrainError::Dimension(format!(
                "features have {} columns, W0 expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if self.w1.nrows() != self.hidden() || self.b0.len() != self.hidden() || self.b1.len() != self.classes() {
            return Err(TrainError::Dimension("inconsistent parameter shapes".into()));
        }
        if let Some(a) = adj {
            if a.n() != x.nrows() {
                return Err(TrainError::Dimension(format!(
                    "adjacency is {}x{}, features have {} rows",
                    a.n(),
                    a.n(),
                    x.nrows()
                )));
            }
        }
        Ok(())
    }
}

fn propagate(adj: Option<&NormalizedAdjacency>, x: &Array2<f64>) -> Array2<f64> {
    match adj {
        Some(a) => a.matmul(x),
        None => x.clone(),
    }
}

/// Intermediate values kept for the backward pass.
struct Forward {
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    logits: Array2<f64>,
}

/// Forward from the already-propagated input `px = P · X`. `keep` is an
/// optional inverted-dropout multiplier on the hidden layer.
fn forward_from(adj: Option<&NormalizedAdjacency>, px: &Array2<f64>, p: &GcnParams, keep: Option<&Array2<f64>>) -> Forward {
    let mut pre_hidden = px.dot(&p.w0);
    pre_hidden += &p.b0;
    let mut hidden = pre_hidden.mapv(|v| v.max(0.0));
    if let Some(mask) = keep {
        hidden *= mask;
    }
    let mut logits = propagate(adj, &hidden.dot(&p.w1));
    logits += &p.b1;
    Forward {
        pre_hidden,
        hidden,
        logits,
    }
}

pub fn gcn_forward(adj: &NormalizedAdjacency, x: &Array2<f64>, p: &GcnParams) -> Result<Array2<f64>, TrainError> {
    p.check(x, Some(adj))?;
    Ok(forward_from(Some(adj), &adj.matmul(x), p, None).logits)
}

pub fn mlp_forward(x: &Array2<f64>, p: &GcnParams) -> Result<Array2<f64>, TrainError> {
    p.check(x, None)?;
    Ok(forward_from(None, x, p, None).logits)
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<(), TrainError> {
    if labels.len() != n {
        return Err(TrainError::Dimension(format!("{} labels for {n} nodes", labels.len())));
    }
    if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(TrainError::BadLabel { node, label, classes });
    }
    Ok(())
}

/// Mean softmax cross-entropy over `mask` and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<(f64, Array2<f64>), TrainError> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    check_labels(labels, logits.nrows(), logits.ncols())?;
    let scale = 1.0 / mask.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[labels[i]];
        let mut g = grad.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            g[c] = (v - log_z).exp() * scale;
        }
        g[labels[i]] -= scale;
    }
    Ok((loss * scale, grad))
}

fn backward(
    adj: Option<&NormalizedAdjacency>,
    px: &Array2<f64>,
    p: &GcnParams,
    fwd: &Forward,
    d_logits: &Array2<f64>,
    keep: Option<&Array2<f64>>,
) -> GcnParams {
    let b1 = d_logits.sum_axis(Axis(0));
    let d_m = propagate(adj, d_logits);
    let w1 = fwd.hidden.t().dot(&d_m);
    let mut d_pre = d_m.dot(&p.w1.t());
    if let Some(mask) = keep {
        d_pre *= mask;
    }
    Zip::from(&mut d_pre).and(&fwd.pre_hidden).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    GcnParams {
        w0: px.t().dot(&d_pre),
        b0: d_pre.sum_axis(Axis(0)),
        w1,
        b1,
    }
}

/// Masked mean cross-entropy and the gradient for every parameter.
/// `adj = None` gives the MLP.
pub fn loss_and_grads(
    adj: Option<&NormalizedAdjacency>,
    x: &Array2<f64>,
    p: &GcnParams,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, GcnParams), TrainError> {
    p.check(x, adj)?;
    let px = propagate(adj, x);
    let fwd = forward_from(adj, &px, p, None);
    let (loss, d_logits) = softmax_cross_entropy(&fwd.logits, labels, mask)?;
    Ok((loss, backward(adj, &px, p, &fwd, &d_logits, None)))
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `mask` whose arg-max logit (lowest index on ties) equals the label.
/// An empty mask scores 0.
pub fn evaluate_accuracy(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let correct = mask.iter().filter(|&&i| argmax(logits.row(i)) == labels[i]).count();
    correct as f64 / mask.len() as f64
}

/// Arg-max class per node.
pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits.rows().into_iter().map(argmax).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Drop probability on the hidden layer during training.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 300,
            patience: 30,
            dropout: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_valid_accuracy: f64,
    /// Test accuracy of the best-validation checkpoint.
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Training cross-entropy per epoch (without the weight-decay term).
    pub loss_curve: Vec<f64>,
}

impl TrainReport {
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

/// Class count is inferred as `max(label) + 1`; use [`train_with_classes`]
/// when some classes may be absent.
pub fn train_gcn(
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[usize],
    split: &NodeSplit,
    cfg: &GcnConfig,
) -> Result<(GcnParams, TrainReport), TrainError> {
    train_with_classes(Some(adj), x, labels, inferred_classes(labels), split, cfg)
}

pub fn train_mlp(x: &Array2<f64>, labels: &[usize], split: &NodeSplit, cfg: &GcnConfig) -> Result<(GcnParams, TrainReport), TrainError> {
    train_with_classes(None, x, labels, inferred_classes(labels), split, cfg)
}

fn inferred_classes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(1, |m| m + 1)
}

/// Adam training with early stopping; `adj = None` trains the MLP.
///
/// An epoch counts as an improvement when validation accuracy rises, or stays
/// equal while validation loss falls. Training stops after `patience` epochs
/// without improvement; the reported test accuracy is that of the best epoch.
pub fn train_with_classes(
    adj: Option<&NormalizedAdjacency>,
    x: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    split: &NodeSplit,
    cfg: &GcnConfig,
) -> Result<(GcnParams, TrainReport), TrainError> {
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    check_labels(labels, x.nrows(), classes)?;
    let mut params = GcnParams::glorot(x.ncols(), cfg.hidden, classes, cfg.seed);
    params.check(x, adj)?;
    let px = propagate(adj, x);

    let mut opts = [
        Adam::new(params.w0.len(), cfg.lr),
        Adam::new(params.b0.len(), cfg.lr),
        Adam::new(params.w1.len(), cfg.lr),
        Adam::new(params.b1.len(), cfg.lr),
    ];
    let mut dropout_rng = rng::derived(cfg.seed, "gcn_dropout");
    let keep_scale = 1.0 / (1.0 - cfg.dropout);

    let mut best: Option<(f64, f64)> = None;
    let mut best_params = params.clone();
    let mut report = TrainReport {
        best_valid_accuracy: 0.0,
        test_accuracy: 0.0,
        best_epoch: 0,
        epochs_run: 0,
        loss_curve: Vec::new(),
    };
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let keep = (cfg.dropout > 0.0).then(|| {
            Array2::from_shape_fn((x.nrows(), cfg.hidden), |_| {
                if dropout_rng.gen::<f64>() < cfg.dropout {
                    0.0
                } else {
                    keep_scale
                }
            })
        });
        let fwd = forward_from(adj, &px, &params, keep.as_ref());
        let (loss, d_logits) = softmax_cross_entropy(&fwd.logits, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss });
        }
        report.loss_curve.push(loss);
        report.epochs_run = epoch + 1;

        // Score the parameters this epoch started from.
        let eval_logits = if keep.is_some() {
            forward_from(adj, &px, &params, None).logits
        } else {
            fwd.logits.clone()
        };
        let valid_acc = evaluate_accuracy(&eval_logits, labels, &split.valid);
        let (valid_loss, _) = softmax_cross_entropy(&eval_logits, labels, &split.valid)?;
        let improved = match best {
            None => true,
            Some((acc, vloss)) => valid_acc > acc || (valid_acc == acc && valid_loss < vloss),
        };
        if improved {
            best = Some((valid_acc, valid_loss));
            best_params = params.clone();
            report.best_valid_accuracy = valid_acc;
            report.test_accuracy = evaluate_accuracy(&eval_logits, labels, &split.test);
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }

        let mut grads = backward(adj, &px, &params, &fwd, &d_logits, keep.as_ref());
        if cfg.weight_decay > 0.0 {
            grads.w0.scaled_add(cfg.weight_decay, &params.w0);
            grads.w1.scaled_add(cfg.weight_decay, &params.w1);
        }
        let [o0, o1, o2, o3] = &mut opts;
        o0.step(params.w0.as_slice_mut().unwrap(), grads.w0.as_slice().unwrap());
        o1.step(params.b0.as_slice_mut().unwrap(), grads.b0.as_slice().unwrap());
        o2.step(params.w1.as_slice_mut().unwrap(), grads.w1.as_slice().unwrap());
        o3.step(params.b1.as_slice_mut().unwrap(), grads.b1.as_slice().unwrap());
    }
    Ok((best_params, report))
}
