//! Range-aware training of polynomial CNNs.
//!
//! The pipeline takes a trained model, fine-tunes it with cross-entropy
//! plus a weighted range loss so activation inputs shrink, estimates each
//! activation's input range on a held-out set, replaces activations with
//! polynomial fits over those ranges and fine-tunes again.

mod data;
mod polyfy;
mod ranges;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use data::{
    ingest_dataset, load_cifar, load_idx, parse_idx, split, synthetic, DataSource, Dataset, Splits, SplitSpec,
    SyntheticSpec, CIFAR_RECORD,
};
pub use polyfy::{lipschitz_bound, polyfy, polyfy_chained, LayerFit};
pub use ranges::{estimate_ranges, per_sample_extremes, quantile, RangeEstimate};

use crate::netgraph::{
    evaluate_nodes, forward_node, init_weights, param_name, ActivationSpec, GraphError, NetworkGraph, NodeKind, Weights,
};
use crate::numcore::ops::{self, QNorm};
use crate::numcore::{seeded_rng, NumError, Tape, Tensor, Var};
use crate::polyapprox::{ApproxError, FitMethod};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("loss became non-finite in {phase} epoch {epoch}; last good weights kept")]
    Diverged {
        phase: Phase,
        epoch: usize,
        checkpoint: Box<Model>,
    },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// A graph with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub graph: NetworkGraph,
    pub weights: Weights,
}

impl Model {
    /// Validates `graph` and draws fresh weights from `seed`.
    pub fn init(graph: NetworkGraph, seed: u64) -> Result<Self, TrainError> {
        graph.validate()?;
        let weights = init_weights(&graph, &mut seeded_rng(seed));
        Ok(Model { graph, weights })
    }

    /// Logits for a batch, with frozen batch-norm statistics.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor, TrainError> {
        Ok(crate::netgraph::evaluate(&self.graph, &self.weights, images)?)
    }

    /// Names of the parameters updated by training.
    pub fn trainable(&self) -> Vec<String> {
        self.weights
            .keys()
            .filter(|k| [".weight", ".bias", ".gamma", ".beta"].iter().any(|s| k.ends_with(s)))
            .cloned()
            .collect()
    }
}

/// Activation inputs, in topological activation order, for a batch
/// evaluated with frozen statistics.
pub fn activation_inputs(model: &Model, images: &Tensor) -> Result<Vec<(usize, Tensor)>, TrainError> {
    let values = evaluate_nodes(&model.graph, &model.weights, images, &mut |_, t| Ok(t))?;
    Ok(model
        .graph
        .activation_ids()
        .into_iter()
        .map(|id| (id, values[&model.graph.inputs_of(id)[0]].clone()))
        .collect())
}

/// Range-loss settings. The inner norm is always the max-norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeLossConfig {
    pub w: f64,
    pub q: QNorm,
}

impl Default for RangeLossConfig {
    fn default() -> Self {
        RangeLossConfig { w: 0.0, q: QNorm::L2 }
    }
}

/// Range loss of the given activation inputs: batch mean of the per-sample
/// q-norm of per-layer max-norms.
pub fn range_loss(tape: &mut Tape, inputs: &[Var], q: QNorm) -> Result<Var, TrainError> {
    Ok(tape.range_loss(inputs, q)?)
}

/// Result of a forward pass on a tape.
pub struct TapeForward {
    pub logits: Var,
    /// `(activation id, input)` in topological order.
    pub activation_inputs: Vec<(usize, Var)>,
    /// `(batch-norm id, batch mean, batch variance)` in training mode.
    pub bn_stats: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Records the forward pass on `tape`. `params` maps parameter names to
/// tape leaves; in training mode batch norms use batch statistics.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &Model,
    params: &BTreeMap<String, Var>,
    input: Var,
    training: bool,
) -> Result<TapeForward, TrainError> {
    let g = &model.graph;
    let order = g.topo_order().ok_or_else(|| TrainError::Config("cyclic graph".into()))?;
    let mut vars: BTreeMap<usize, Var> = BTreeMap::new();
    let mut acts = Vec::new();
    let mut stats = Vec::new();
    let param = |id: usize, role: &str| {
        params
            .get(&param_name(id, role))
            .copied()
            .ok_or_else(|| TrainError::Config(format!("missing parameter {}", param_name(id, role))))
    };
    let mut logits = None;
    for id in order {
        let node = g.node(id).expect("ordered node");
        let ins: Vec<Var> = g.inputs_of(id).iter().map(|i| vars[i]).collect();
        let v = match &node.kind {
            NodeKind::Input => input,
            NodeKind::Conv(spec) => {
                let b = if spec.bias { Some(param(id, "bias")?) } else { None };
                tape.conv2d(ins[0], param(id, "weight")?, b, spec.geometry())?
            }
            NodeKind::BatchNorm => {
                let (gamma, beta) = (param(id, "gamma")?, param(id, "beta")?);
                if training {
                    let (v, mean, var) = tape.batch_norm_train(ins[0], gamma, beta)?;
                    stats.push((id, mean, var));
                    v
                } else {
                    let w = &model.weights;
                    let mean = w[&param_name(id, "mean")].data().to_vec();
                    let var = w[&param_name(id, "var")].data().to_vec();
                    tape.batch_norm_eval(ins[0], gamma, beta, &mean, &var)?
                }
            }
            NodeKind::MeanPool { window } => {
                let dims = tape.value(ins[0]).dims().to_vec();
                let (kh, kw) = if *window == 0 { (dims[2], dims[3]) } else { (*window, *window) };
                tape.mean_pool2d(ins[0], kh, kw)?
            }
            NodeKind::FullyConnected { bias, .. } => {
                let t = tape.value(ins[0]);
                let n = t.dims()[0];
                let flat = tape.reshape(ins[0], &[n, t.len() / n])?;
                let b = if *bias { Some(param(id, "bias")?) } else { None };
                tape.linear(flat, param(id, "weight")?, b)?
            }
            NodeKind::Activation(spec) => {
                acts.push((id, ins[0]));
                match spec {
                    ActivationSpec::Relu => tape.relu(ins[0])?,
                    ActivationSpec::Gelu => tape.gelu(ins[0])?,
                    ActivationSpec::Poly(p) => tape.poly(ins[0], p.coeffs())?,
                }
            }
            NodeKind::Add => tape.add(ins[0], ins[1])?,
            NodeKind::Scale(a) => tape.scale(ins[0], *a)?,
            NodeKind::Output => {
                logits = Some(ins[0]);
                ins[0]
            }
            NodeKind::Bootstrap | NodeKind::Rescale { .. } => ins[0],
            k @ (NodeKind::MaxPool { .. } | NodeKind::LayerNorm) => {
                return Err(GraphError::Rejected {
                    kind: k.name().into(),
                    hint: k.rejection_hint().unwrap_or_default().into(),
                }
                .into())
            }
        };
        vars.insert(id, v);
    }
    Ok(TapeForward {
        logits: logits.ok_or_else(|| TrainError::Config("graph has no Output".into()))?,
        activation_inputs: acts,
        bn_stats: stats,
    })
}

/// Loss components on one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub rl: f64,
}

/// Training-mode loss on a batch and its gradient for every trainable
/// parameter, plus the batch-norm statistics seen.
pub struct LossGrad {
    pub loss: LossParts,
    pub grads: BTreeMap<String, Tensor>,
    pub bn_stats: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Which statistics batch norms use while training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Batch,
    /// Stored statistics; gamma and beta still train.
    Frozen,
}

/// `CE + w * rl` on a batch.
pub fn loss_and_grads(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    cfg: RangeLossConfig,
    bn: BnMode,
) -> Result<LossGrad, TrainError> {
    if !(cfg.w >= 0.0) {
        return Err(TrainError::Config(format!("range-loss weight {} must be non-negative", cfg.w)));
    }
    let mut tape = Tape::new();
    let names = model.trainable();
    let mut params = BTreeMap::new();
    for name in &names {
        params.insert(name.clone(), tape.leaf(model.weights[name].clone()));
    }
    let x = tape.leaf(images.clone());
    let fwd = forward_on_tape(&mut tape, model, &params, x, bn == BnMode::Batch)?;
    let ce = tape.cross_entropy(fwd.logits, labels)?;
    let (loss, rl_value) = if fwd.activation_inputs.is_empty() {
        (ce, 0.0)
    } else {
        let ins: Vec<Var> = fwd.activation_inputs.iter().map(|a| a.1).collect();
        let rl = range_loss(&mut tape, &ins, cfg.q)?;
        let weighted = tape.scale(rl, cfg.w)?;
        (tape.add(ce, weighted)?, tape.value(rl).item())
    };
    let parts = LossParts {
        total: tape.value(loss).item(),
        ce: tape.value(ce).item(),
        rl: rl_value,
    };
    if !parts.total.is_finite() {
        return Err(NumError::NonFinite {
            context: "total loss".into(),
            index: 0,
        }
        .into());
    }
    let vars: Vec<Var> = names.iter().map(|n| params[n]).collect();
    let grads = tape.grad(loss, &vars)?;
    Ok(LossGrad {
        loss: parts,
        grads: names.into_iter().zip(grads).collect(),
        bn_stats: fwd.bn_stats,
    })
}

/// `CE + w * rl` on a batch in training mode.
pub fn total_loss(model: &Model, images: &Tensor, labels: &[usize], cfg: RangeLossConfig) -> Result<LossParts, TrainError> {
    Ok(loss_and_grads(model, images, labels, cfg, BnMode::Batch)?.loss)
}

/// Accuracy, losses and per-activation input ranges on a dataset with
/// frozen statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalStats {
    pub accuracy: f64,
    pub ce: f64,
    pub rl: f64,
    /// `(activation id, min, max)`.
    pub ranges: Vec<(usize, f64, f64)>,
}

impl EvalStats {
    /// Largest absolute activation input over all layers.
    pub fn envelope(&self) -> f64 {
        self.ranges.iter().map(|r| r.1.abs().max(r.2.abs())).fold(0.0, f64::max)
    }
}

pub fn evaluate_split(model: &Model, data: &Dataset, q: QNorm, batch: usize) -> Result<EvalStats, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("evaluation set is empty".into()));
    }
    let g = &model.graph;
    let acts = g.activation_ids();
    let out = g.output_id().ok_or_else(|| TrainError::Config("graph has no Output".into()))?;
    let mut ranges: Vec<(usize, f64, f64)> = acts.iter().map(|&a| (a, f64::INFINITY, f64::NEG_INFINITY)).collect();
    let (mut correct, mut ce, mut rl) = (0usize, 0.0, 0.0);
    for b in data.batches(batch) {
        let values = evaluate_nodes(g, &model.weights, &b.images, &mut |_, t| Ok(t))?;
        let logits = &values[&out];
        let (loss, probs) = ops::softmax_cross_entropy(logits, &b.labels)?;
        ce += loss * b.len() as f64;
        let k = probs.dims()[1];
        for (s, &label) in b.labels.iter().enumerate() {
            let row = &logits.data()[s * k..(s + 1) * k];
            let pred = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(pred == label);
        }
        let mut per_layer = Vec::new();
        for (r, &a) in ranges.iter_mut().zip(&acts) {
            let x = &values[&g.inputs_of(a)[0]];
            for &v in x.data() {
                r.1 = r.1.min(v);
                r.2 = r.2.max(v);
            }
            per_layer.push(ops::per_sample_max_abs(x));
        }
        if !per_layer.is_empty() {
            for s in 0..b.len() {
                let norms: Vec<f64> = per_layer.iter().map(|l| l[s].0).collect();
                rl += ops::q_norm_with_grad(&norms, q).0;
            }
        }
    }
    let n = data.len() as f64;
    Ok(EvalStats {
        accuracy: correct as f64 / n,
        ce: ce / n,
        rl: rl / n,
        ranges,
    })
}

/// Replaces every batch norm's stored statistics with the exact mean and
/// biased variance of its input over `data`, computed layer by layer with
/// the already refrozen statistics upstream.
pub fn refreeze_batchnorm(model: &Model, data: &Dataset) -> Result<Model, TrainError> {
    let g = &model.graph;
    let mut weights = model.weights.clone();
    let mut vals: BTreeMap<usize, Tensor> = BTreeMap::new();
    for id in g.topo_order().ok_or_else(|| TrainError::Config("cyclic graph".into()))? {
        let node = g.node(id).expect("ordered node");
        let v = if node.kind == NodeKind::Input {
            data.images.clone()
        } else {
            let ins: Vec<&Tensor> = g.inputs_of(id).iter().map(|i| &vals[i]).collect();
            if node.kind == NodeKind::BatchNorm {
                let (mean, var) = ops::channel_stats(ins[0])?;
                let c = mean.len();
                weights.insert(param_name(id, "mean"), Tensor::new(vec![c], mean)?);
                weights.insert(param_name(id, "var"), Tensor::new(vec![c], var)?);
            }
            forward_node(node, &ins, &weights)?
        };
        vals.insert(id, v);
    }
    Ok(Model { graph: model.graph.clone(), weights })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    RangeTune,
    FineTune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::RangeTune => "range_tune",
            Phase::FineTune => "fine_tune",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub degree: usize,
    pub method: FitMethod,
    /// Plain training (w = 0) before the pipeline, for models that start
    /// untrained.
    pub pretrain_epochs: usize,
    pub range_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    /// Learning rate after polynomial replacement.
    pub finetune_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub w_pre: f64,
    pub w_post: f64,
    pub q: QNorm,
    pub alpha: f64,
    /// Weight of the newest batch in running batch-norm statistics.
    pub bn_momentum: f64,
    /// Extra margin on each side of an estimated range, as a fraction of
    /// its width. High-degree fits explode just outside their range.
    pub range_slack: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            degree: 18,
            method: FitMethod::Remez,
            pretrain_epochs: 0,
            range_epochs: 5,
            finetune_epochs: 3,
            lr: 0.02,
            finetune_lr: 0.002,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            w_pre: 0.0005,
            w_post: 0.05,
            q: QNorm::L2,
            alpha: 1.0,
            bn_momentum: 0.1,
            range_slack: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("learning rate {} / momentum {} invalid", self.lr, self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.w_pre >= 0.0 && self.w_post >= 0.0) {
            return bad("range-loss weights must be non-negative".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("confidence {} outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("batch-norm momentum {} outside [0, 1]", self.bn_momentum));
        }
        if !(self.range_slack >= 0.0 && self.range_slack.is_finite()) {
            return bad(format!("range slack {} must be non-negative", self.range_slack));
        }
        Ok(())
    }
}

/// One CSV row: a layer's range after an epoch of a phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub phase: Phase,
    pub accuracy: f64,
    pub ce_loss: f64,
    pub range_loss: f64,
    pub layer_id: usize,
    pub range_min: f64,
    pub range_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub rows: Vec<MetricRow>,
}

impl Metrics {
    fn record(&mut self, phase: Phase, epoch: usize, s: &EvalStats) {
        for &(layer_id, range_min, range_max) in &s.ranges {
            self.rows.push(MetricRow {
                epoch,
                phase,
                accuracy: s.accuracy,
                ce_loss: s.ce,
                range_loss: s.rl,
                layer_id,
                range_min,
                range_max,
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,accuracy,ce_loss,range_loss,layer_id,range_min,range_max\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.phase, r.accuracy, r.ce_loss, r.range_loss, r.layer_id, r.range_min, r.range_max
            );
        }
        s
    }
}

/// SGD with momentum over the trainable parameters, plus running
/// batch-norm statistics.
struct Sgd {
    lr: f64,
    momentum: f64,
    bn_momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    fn new(cfg: &TrainConfig, phase: Phase) -> Self {
        Sgd {
            lr: if phase == Phase::FineTune { cfg.finetune_lr } else { cfg.lr },
            momentum: cfg.momentum,
            bn_momentum: cfg.bn_momentum,
            velocity: BTreeMap::new(),
        }
    }

    fn step(&mut self, weights: &mut Weights, step: &LossGrad) -> Result<(), TrainError> {
        for (name, g) in &step.grads {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.dims()));
            let (mu, lr) = (self.momentum, self.lr);
            *v = v.zip_map(g, |v, g| mu * v + g)?;
            let w = weights.get_mut(name).expect("trainable weight");
            *w = w.zip_map(v, |w, v| w - lr * v)?;
        }
        let m = self.bn_momentum;
        for (id, mean, var) in &step.bn_stats {
            for (role, batch) in [("mean", mean), ("var", var)] {
                let t = weights.get_mut(&param_name(*id, role)).expect("batch-norm statistic");
                for (r, b) in t.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Num(NumError::NonFinite { .. }) | TrainError::Graph(GraphError::Num(NumError::NonFinite { .. }))
    )
}

/// Runs `epochs` epochs of minibatch training with range weight `w`,
/// recording validation metrics at epoch 0 and after every epoch. Batch
/// norms keep their stored statistics in the fine-tune phase, since
/// batch statistics can push inputs outside the fitted ranges.
pub fn run_phase(
    model: &Model,
    splits: &Splits,
    phase: Phase,
    epochs: usize,
    w: f64,
    cfg: &TrainConfig,
    metrics: &mut Metrics,
) -> Result<Model, TrainError> {
    cfg.check()?;
    if splits.train.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    let mut model = model.clone();
    let loss_cfg = RangeLossConfig { w, q: cfg.q };
    let diverged = |epoch, checkpoint: &Model| TrainError::Diverged {
        phase,
        epoch,
        checkpoint: Box::new(checkpoint.clone()),
    };
    match evaluate_split(&model, &splits.val, cfg.q, 256) {
        Ok(s) if s.ce.is_finite() => metrics.record(phase, 0, &s),
        Ok(_) => return Err(diverged(0, &model)),
        Err(e) if is_non_finite(&e) => return Err(diverged(0, &model)),
        Err(e) => return Err(e),
    }
    let mut rng = seeded_rng(cfg.seed ^ (phase as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut sgd = Sgd::new(cfg, phase);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let bn = if phase == Phase::FineTune { BnMode::Frozen } else { BnMode::Batch };
    for epoch in 1..=epochs {
        let checkpoint = model.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            // batch norm needs two samples for a variance
            if chunk.len() < 2 && bn == BnMode::Batch {
                continue;
            }
            let batch = splits.train.subset(chunk);
            let step = match loss_and_grads(&model, &batch.images, &batch.labels, loss_cfg, bn) {
                Ok(s) => s,
                Err(e) if is_non_finite(&e) => return Err(diverged(epoch, &checkpoint)),
                Err(e) => return Err(e),
            };
            sgd.step(&mut model.weights, &step)?;
        }
        let stats = match evaluate_split(&model, &splits.val, cfg.q, 256) {
            Ok(s) if s.ce.is_finite() => s,
            Ok(_) => return Err(diverged(epoch, &checkpoint)),
            Err(e) if is_non_finite(&e) => return Err(diverged(epoch, &checkpoint)),
            Err(e) => return Err(e),
        };
        metrics.record(phase, epoch, &stats);
    }
    Ok(model)
}

/// Everything produced by [`train_he_friendly`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: Model,
    pub metrics: Metrics,
    pub ranges: Vec<RangeEstimate>,
    pub fits: Vec<LayerFit>,
    /// Output deviation bound of the polyfied model before fine-tuning.
    pub deviation_bound: f64,
    /// Validation accuracy of the input model, after range tuning, right
    /// after polynomial replacement and at the end.
    pub accuracy: [f64; 4],
    /// Largest absolute activation input on the validation set before and
    /// after range tuning.
    pub envelope: [f64; 2],
}

/// Range tuning, range estimation, polynomial replacement and fine-tuning.
/// Batch-norm statistics are refrozen on the training set after range
/// tuning and stay fixed from then on, so the fitted ranges keep matching
/// what the polynomials see.
pub fn train_he_friendly(model: &Model, splits: &Splits, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.check()?;
    model.graph.validate()?;
    let mut metrics = Metrics::default();
    let mut m = model.clone();
    if cfg.pretrain_epochs > 0 {
        m = run_phase(&m, splits, Phase::Pretrain, cfg.pretrain_epochs, 0.0, cfg, &mut metrics)?;
    }
    let before = evaluate_split(&m, &splits.val, cfg.q, 256)?;
    m = run_phase(&m, splits, Phase::RangeTune, cfg.range_epochs, cfg.w_pre, cfg, &mut metrics)?;
    m = refreeze_batchnorm(&m, &splits.train)?;
    let tuned = evaluate_split(&m, &splits.val, cfg.q, 256)?;
    let ranges: Vec<RangeEstimate> = estimate_ranges(&m, &splits.range, cfg.alpha, &[])?
        .into_iter()
        .map(|r| r.with_margin(cfg.range_slack * (r.hi - r.lo)))
        .collect();
    let (poly, fits) = polyfy_chained(&m, &ranges, cfg.degree, cfg.method)?;
    let deviation_bound = lipschitz_bound(&poly, &fits)?;
    let start = metrics.rows.len();
    let final_model = run_phase(&poly, splits, Phase::FineTune, cfg.finetune_epochs, cfg.w_post, cfg, &mut metrics)?;
    let replaced = metrics.rows.get(start).map_or(f64::NAN, |r| r.accuracy);
    let last = evaluate_split(&final_model, &splits.val, cfg.q, 256)?;
    let ranges = ranges
        .iter()
        .zip(&fits)
        .map(|(r, f)| r.with_margin(r.lo - f.lo))
        .collect();
    Ok(TrainReport {
        model: final_model,
        metrics,
        ranges,
        fits,
        deviation_bound,
        accuracy: [before.accuracy, tuned.accuracy, replaced, last.accuracy],
        envelope: [before.envelope(), tuned.envelope()],
    })
}
