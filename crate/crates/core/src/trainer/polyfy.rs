use std::collections::BTreeMap;

use serde::Serialize;

use super::{Model, RangeEstimate, TrainError};
use crate::netgraph::{param_name, ActivationSpec, NetworkGraph, NodeKind};
use crate::numcore::ops::{self, BN_EPS};
use crate::polyapprox::{fit, FitMethod, Interval};

/// Fit of one activation layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerFit {
    pub layer: usize,
    pub lo: f64,
    pub hi: f64,
    pub max_error: f64,
}

impl LayerFit {
    pub fn range(&self) -> Interval {
        Interval::new(self.lo, self.hi).expect("fitted range")
    }
}

fn target(spec: &ActivationSpec) -> Box<dyn Fn(f64) -> f64 + '_> {
    match spec {
        ActivationSpec::Relu => Box::new(ops::relu),
        ActivationSpec::Gelu => Box::new(ops::gelu),
        ActivationSpec::Poly(p) => Box::new(move |x| p.eval(x)),
    }
}

fn fit_layer(spec: &ActivationSpec, layer: usize, range: Interval, degree: usize, method: FitMethod) -> Result<(ActivationSpec, LayerFit), TrainError> {
    let f = target(spec);
    let mut report = fit(method, &f, degree, range)?;
    if method == FitMethod::Remez {
        report = report.require_converged()?;
    }
    let fit = LayerFit {
        layer,
        lo: range.lo,
        hi: range.hi,
        max_error: report.max_abs_error,
    };
    Ok((ActivationSpec::Poly(report.polynomial), fit))
}

fn check_layers(graph: &NetworkGraph, ranges: &[RangeEstimate]) -> Result<Vec<usize>, TrainError> {
    let acts = graph.activation_ids();
    if acts.len() != ranges.len() {
        return Err(TrainError::Config(format!(
            "{} ranges for {} activation layers",
            ranges.len(),
            acts.len()
        )));
    }
    if let Some((a, r)) = acts.iter().zip(ranges).find(|(a, r)| **a != r.layer) {
        return Err(TrainError::Config(format!("range for node {} given where node {a} comes next", r.layer)));
    }
    Ok(acts)
}

/// Replaces every activation with a degree-`degree` fit over its inflated
/// range.
pub fn polyfy(model: &Model, ranges: &[RangeEstimate], degree: usize, method: FitMethod) -> Result<(Model, Vec<LayerFit>), TrainError> {
    check_layers(&model.graph, ranges)?;
    let mut specs = BTreeMap::new();
    let mut fits = Vec::new();
    for r in ranges {
        let spec = activation_spec(&model.graph, r.layer);
        let (new, fit) = fit_layer(&spec, r.layer, r.inflated(), degree, method)?;
        specs.insert(r.layer, new);
        fits.push(fit);
    }
    let graph = model.graph.map_activations(|id, _| specs[&id].clone());
    Ok((Model { graph, weights: model.weights.clone() }, fits))
}

/// [`polyfy`] where each layer's margin grows by the previous layer's fitted
/// max error (nothing for the first layer).
pub fn polyfy_chained(model: &Model, ranges: &[RangeEstimate], degree: usize, method: FitMethod) -> Result<(Model, Vec<LayerFit>), TrainError> {
    check_layers(&model.graph, ranges)?;
    let mut margin = 0.0;
    let mut specs = BTreeMap::new();
    let mut fits = Vec::new();
    for r in ranges {
        let r = r.with_margin(r.margin + margin);
        let spec = activation_spec(&model.graph, r.layer);
        let (new, fit) = fit_layer(&spec, r.layer, r.inflated(), degree, method)?;
        margin = fit.max_error;
        specs.insert(r.layer, new);
        fits.push(fit);
    }
    let graph = model.graph.map_activations(|id, _| specs[&id].clone());
    Ok((Model { graph, weights: model.weights.clone() }, fits))
}

fn activation_spec(graph: &NetworkGraph, id: usize) -> ActivationSpec {
    match &graph.node(id).expect("activation id").kind {
        NodeKind::Activation(s) => s.clone(),
        _ => unreachable!("activation_ids returns activations"),
    }
}

/// Bound on the max-norm gap between the polyfied model's output and the
/// original's, for inputs on which every original activation input stays
/// inside its fitted range. Deviations propagate through linear nodes by
/// their induced max-norms; an activation adds its fit error plus its
/// polynomial's derivative bound, over the range widened by the incoming
/// deviation, times that deviation. The bound may be infinite for deep
/// high-degree models.
pub fn lipschitz_bound(model: &Model, fits: &[LayerFit]) -> Result<f64, TrainError> {
    let g = &model.graph;
    let w = &model.weights;
    let fit_of: BTreeMap<usize, &LayerFit> = fits.iter().map(|f| (f.layer, f)).collect();
    let get = |id: usize, role: &str| {
        w.get(&param_name(id, role))
            .ok_or_else(|| TrainError::Config(format!("missing {}", param_name(id, role))))
    };
    let mut dev: BTreeMap<usize, f64> = BTreeMap::new();
    let order = g.topo_order().ok_or_else(|| TrainError::Config("cyclic graph".into()))?;
    for id in order {
        let node = g.node(id).expect("ordered node");
        let ins: Vec<f64> = g.inputs_of(id).iter().map(|i| dev[i]).collect();
        let d_in = ins.first().copied().unwrap_or(0.0);
        let d = match &node.kind {
            NodeKind::Input => 0.0,
            NodeKind::Conv(spec) => {
                let wt = get(id, "weight")?;
                let per_out = wt.len() / spec.out_channels;
                let norm = wt
                    .data()
                    .chunks(per_out)
                    .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                norm * d_in
            }
            NodeKind::FullyConnected { out_features, .. } => {
                let wt = get(id, "weight")?;
                let per_out = wt.len() / out_features;
                let norm = wt
                    .data()
                    .chunks(per_out)
                    .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                norm * d_in
            }
            NodeKind::BatchNorm => {
                let gamma = get(id, "gamma")?;
                let var = get(id, "var")?;
                let norm = gamma
                    .data()
                    .iter()
                    .zip(var.data())
                    .map(|(g, v)| g.abs() / (v + BN_EPS).sqrt())
                    .fold(0.0, f64::max);
                norm * d_in
            }
            NodeKind::Scale(a) => a.abs() * d_in,
            NodeKind::Add => ins.iter().sum(),
            NodeKind::Activation(spec) => {
                let widen = |r: Interval| Interval::new(r.lo - d_in, r.hi + d_in).ok();
                let (eps, lip) = match (spec, fit_of.get(&id)) {
                    (ActivationSpec::Poly(p), Some(f)) => {
                        (f.max_error, widen(f.range()).map_or(f64::INFINITY, |r| p.max_abs_derivative_on(r)))
                    }
                    (ActivationSpec::Poly(p), None) => {
                        (0.0, widen(p.domain()).map_or(f64::INFINITY, |r| p.max_abs_derivative_on(r)))
                    }
                    (ActivationSpec::Relu, _) => (0.0, 1.0),
                    // max of Phi(x) + x phi(x), attained at x = sqrt(2)
                    (ActivationSpec::Gelu, _) => (0.0, 1.1289),
                };
                if d_in == 0.0 { eps } else { eps + lip * d_in }
            }
            _ => d_in,
        };
        dev.insert(id, d);
    }
    let d = g.output_id().map_or(0.0, |o| dev[&o]);
    Ok(if d.is_nan() { f64::INFINITY } else { d })
}
