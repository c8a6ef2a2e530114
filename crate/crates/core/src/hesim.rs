//! Mock-HE evaluation: fixed-point quantization after every
//! level-consuming op, with live chain-index tracking.
//!
//! The simulator runs the graph without maintenance nodes and decides
//! bootstraps and rescales itself from the live chain indices, using the
//! same consume table and Add alignment as the static analyzer. The
//! resulting events and levels are then compared with that analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hecost::{align, analyze, latency_breakdown, Analysis, ConsumeTable, HeError, HeProfile};
use crate::netgraph::{evaluate, forward_node, GraphError, NetworkGraph, NodeKind, Weights};
use crate::numcore::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("node {node} ({kind}) has no polynomial evaluation")]
    NotHeFriendly { node: usize, kind: String },
    #[error("value {value} at node {node} exceeds the integer precision limit {limit}")]
    Overflow { node: usize, value: f64, limit: f64 },
    #[error("simulator and analyzer disagree: {0}")]
    Divergence(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Rounds every element to the nearest multiple of `2^-frac_bits`, ties to
/// even. Values with `|x| >= 2^int_bits` overflow.
pub fn quantize(x: &Tensor, frac_bits: u32, int_bits: u32) -> Result<Tensor, SimError> {
    quantize_at(x, frac_bits, int_bits, 0).map(|(t, _)| t)
}

fn quantize_at(x: &Tensor, frac_bits: u32, int_bits: u32, node: usize) -> Result<(Tensor, f64), SimError> {
    if frac_bits == 0 || frac_bits > 60 {
        return Err(SimError::Config(format!("frac_bits {frac_bits} outside 1..=60")));
    }
    let scale = (frac_bits as f64).exp2();
    let limit = (int_bits as f64).exp2();
    let mut worst: f64 = 0.0;
    let mut out = x.clone();
    for v in out.data_mut() {
        if !(v.abs() < limit) {
            return Err(SimError::Overflow { node, value: *v, limit });
        }
        let q = (*v * scale).round_ties_even() / scale;
        worst = worst.max((q - *v).abs());
        *v = q;
    }
    Ok((out, worst))
}

/// Seeded additive Gaussian noise after each quantization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// One bootstrap: the refreshed producer and the `(consumer, port)` pairs
/// that read the refreshed copy.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct BootstrapEvent {
    pub producer: usize,
    pub consumers: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub node_id: usize,
    pub kind: String,
    pub cidx_in: usize,
    pub cidx_out: usize,
    pub quant_err_max: f64,
    /// Bootstraps this node triggered.
    pub bootstrap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub events: Vec<BootstrapEvent>,
    /// Ciphertext bootstraps.
    pub bootstraps: usize,
    pub simulated_latency: f64,
    pub mse: f64,
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node_id,kind,cidx_in,cidx_out,quant_err_max,bootstrap\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{}",
                r.node_id, r.kind, r.cidx_in, r.cidx_out, r.quant_err_max, r.bootstrap
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "mse": self.mse,
            "bootstraps": self.bootstraps,
            "simulated_latency": self.simulated_latency,
        })
        .to_string()
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub output: Tensor,
    pub exact: Tensor,
    pub trace: SimTrace,
}

/// Bootstrap events implied by the Bootstrap nodes of an analysis, with
/// consumers traced through rescales to the original nodes.
pub fn static_bootstrap_events(analysis: &Analysis) -> Vec<BootstrapEvent> {
    let g = &analysis.graph;
    let mut events: Vec<BootstrapEvent> = analysis
        .bootstrap_nodes()
        .into_iter()
        .map(|b| {
            let mut consumers = Vec::new();
            let mut stack = g.consumers_of(b);
            while let Some((to, port)) = stack.pop() {
                match g.node(to).expect("consumer").kind {
                    NodeKind::Rescale { .. } => {
                        // the rescale sits on the consumer's edge: keep its port
                        consumers.extend(g.consumers_of(to));
                    }
                    _ => consumers.push((to, port)),
                }
            }
            consumers.sort_unstable();
            BootstrapEvent {
                producer: g.inputs_of(b)[0],
                consumers,
            }
        })
        .collect();
    events.sort();
    events
}

struct Sim<'a> {
    profile: &'a HeProfile,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Sim<'_> {
    fn encode(&mut self, x: &Tensor, node: usize) -> Result<(Tensor, f64), SimError> {
        let (mut q, err) = quantize_at(x, self.profile.frac_bits, self.profile.int_bits, node)?;
        if let Some((dist, rng)) = self.noise.as_mut() {
            for v in q.data_mut() {
                *v += dist.sample(rng);
            }
        }
        Ok((q, err))
    }
}

/// Runs `graph` on `inputs` under fixed-point quantization. Values are
/// quantized on encoding, after every level-consuming op and after every
/// bootstrap.
pub fn simulate(
    graph: &NetworkGraph,
    weights: &Weights,
    inputs: &Tensor,
    profile: &HeProfile,
    noise: Option<NoiseSpec>,
) -> Result<SimResult, SimError> {
    if let Some(n) = graph.nodes().iter().find(|n| match &n.kind {
        NodeKind::Activation(a) => !a.is_poly(),
        k => k.rejection_hint().is_some(),
    }) {
        return Err(SimError::NotHeFriendly {
            node: n.id,
            kind: n.kind.name().into(),
        });
    }
    let analysis = analyze(graph, profile)?;
    let base = &analysis.base;
    let table = ConsumeTable::for_profile(profile);
    let noise = match noise {
        None => None,
        Some(n) => Some((
            Normal::new(0.0, n.sigma).map_err(|e| SimError::Config(e.to_string()))?,
            ChaCha8Rng::seed_from_u64(n.seed),
        )),
    };
    let mut sim = Sim { profile, noise };
    let u = profile.usable_mults;
    let bout = profile.bootstrap_out;

    let mut vals: BTreeMap<usize, Tensor> = BTreeMap::new();
    let mut cidx: BTreeMap<usize, usize> = BTreeMap::new();
    // producer -> (refreshed value, index into events)
    let mut refreshed: BTreeMap<usize, (Tensor, usize)> = BTreeMap::new();
    let mut events: Vec<BootstrapEvent> = Vec::new();
    let mut rows = Vec::new();

    for id in base.topo_order().expect("validated graph") {
        let node = base.node(id).expect("ordered node");
        let ins = base.inputs_of(id);
        let cidx_in = ins.iter().map(|i| cidx[i]).max().unwrap_or(0);
        let mut triggered = 0;
        let (value, c_out, err) = match &node.kind {
            NodeKind::Input => {
                let (q, e) = sim.encode(inputs, id)?;
                (q, 0, e)
            }
            NodeKind::Add => {
                let plan = align(cidx[&ins[0]], cidx[&ins[1]], profile);
                let mut operands = Vec::new();
                let mut err: f64 = 0.0;
                for (port, boot) in [(0, plan.bootstrap_main), (1, plan.bootstrap_skip)] {
                    let src = ins[port];
                    if boot {
                        let (q, e) = sim.encode(&vals[&src], src)?;
                        err = err.max(e);
                        events.push(BootstrapEvent {
                            producer: src,
                            consumers: vec![(id, port)],
                        });
                        triggered += 1;
                        operands.push(q);
                    } else {
                        operands.push(vals[&src].clone());
                    }
                }
                let refs: Vec<&Tensor> = operands.iter().collect();
                (forward_node(node, &refs, weights)?, plan.out, err)
            }
            k => {
                let levels = table.levels(id, k)?;
                let mut err: f64 = 0.0;
                let (x, c) = match ins.first() {
                    None => (None, 0),
                    Some(&src) if levels > 0 && cidx[&src] + levels > u => {
                        if bout + levels > u {
                            return Err(SimError::Divergence(format!(
                                "node {id} needs {levels} levels after a bootstrap"
                            )));
                        }
                        if !refreshed.contains_key(&src) {
                            let (q, e) = sim.encode(&vals[&src], src)?;
                            err = e;
                            events.push(BootstrapEvent {
                                producer: src,
                                consumers: Vec::new(),
                            });
                            triggered += 1;
                            refreshed.insert(src, (q, events.len() - 1));
                        }
                        let (q, ev) = &refreshed[&src];
                        events[*ev].consumers.push((id, 0));
                        (Some(q.clone()), bout)
                    }
                    Some(&src) => (Some(vals[&src].clone()), cidx[&src]),
                };
                let xs: Vec<&Tensor> = x.iter().collect();
                let mut v = forward_node(node, &xs, weights)?;
                if levels > 0 {
                    let (q, e) = sim.encode(&v, id)?;
                    v = q;
                    err = err.max(e);
                }
                (v, c + levels, err)
            }
        };
        if c_out > u {
            return Err(SimError::Divergence(format!("node {id} reached level {c_out} above {u}")));
        }
        rows.push(TraceRow {
            node_id: id,
            kind: node.kind.name().into(),
            cidx_in,
            cidx_out: c_out,
            quant_err_max: err,
            bootstrap: triggered,
        });
        cidx.insert(id, c_out);
        vals.insert(id, value);
    }

    for (id, c) in &cidx {
        if analysis.cidx[id] != *c {
            return Err(SimError::Divergence(format!(
                "node {id}: live level {c}, static level {}",
                analysis.cidx[id]
            )));
        }
    }
    for e in &mut events {
        e.consumers.sort_unstable();
    }
    events.sort();
    if events != static_bootstrap_events(&analysis) {
        return Err(SimError::Divergence("bootstrap events differ from the inserted Bootstrap nodes".into()));
    }

    let out = base
        .output_id()
        .ok_or_else(|| SimError::Config("graph has no Output".into()))?;
    let output = vals.remove(&out).expect("output evaluated");
    let exact = evaluate(base, weights, inputs)?;
    let mse = output
        .data()
        .iter()
        .zip(exact.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / output.len() as f64;
    let bootstraps = events
        .iter()
        .map(|e| profile.ciphertexts(base.node(e.producer).expect("producer").numel()))
        .sum();
    let simulated_latency = latency_breakdown(&analysis)?.total;
    Ok(SimResult {
        output,
        exact,
        trace: SimTrace {
            rows,
            events,
            bootstraps,
            simulated_latency,
            mse,
        },
    })
}

/// Output MSE for each precision in `frac_bits`, all else fixed.
pub fn mse_sweep(
    graph: &NetworkGraph,
    weights: &Weights,
    inputs: &Tensor,
    profile: &HeProfile,
    frac_bits: &[u32],
) -> Result<Vec<(u32, f64)>, SimError> {
    frac_bits
        .iter()
        .map(|&f| {
            let p = HeProfile {
                frac_bits: f,
                ..profile.clone()
            };
            simulate(graph, weights, inputs, &p, None).map(|r| (f, r.trace.mse))
        })
        .collect()
}
