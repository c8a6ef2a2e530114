//! Latency model over an analysed graph.
//!
//! Per-ciphertext op counts:
//! - Conv: one plaintext multiply per kernel tap plus a rotate-and-add to
//!   gather each extra tap. Channel mixing is assumed absorbed by packing.
//! - Poly activation of degree d: d-1 ciphertext products for the powers,
//!   d plaintext coefficient products and d additions.
//! - FullyConnected: one plaintext multiply and one rotation per output.
//! - MeanPool: a rotate-and-add per halving of the window, then one
//!   plaintext multiply.
//! - BatchNorm: free when folded, otherwise a plaintext multiply and an add.

use std::fmt::Write as _;

use serde::Serialize;

use super::{Analysis, HeError};
use crate::netgraph::{ActivationSpec, NodeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Activations,
    Bootstraps,
    Conv,
    SkipAdaptation,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Activations,
        Category::Bootstraps,
        Category::Conv,
        Category::SkipAdaptation,
        Category::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Activations => "activations",
            Category::Bootstraps => "bootstraps",
            Category::Conv => "conv",
            Category::SkipAdaptation => "skip_adaptation",
            Category::Other => "other",
        }
    }
}

/// Category and latency of one node of the analysed graph.
pub fn node_cost(analysis: &Analysis, id: usize) -> Result<(Category, f64), HeError> {
    let g = &analysis.graph;
    let node = g.node(id).expect("analysed node");
    let p = &analysis.profile;
    let c = &p.costs;
    let in_numel = g.inputs_of(id).first().map_or(node.numel(), |&i| g.node(i).expect("input").numel());
    let cts_in = p.ciphertexts(in_numel) as f64;
    let cts = p.ciphertexts(node.numel()) as f64;
    Ok(match &node.kind {
        NodeKind::Input | NodeKind::Output => (Category::Other, 0.0),
        NodeKind::Conv(spec) => {
            let taps = (spec.kernel * spec.kernel) as f64;
            (Category::Conv, cts * (taps * c.ct_pt_mult + (taps - 1.0) * (c.rotate + c.add)))
        }
        NodeKind::Activation(ActivationSpec::Poly(poly)) => {
            let d = poly.degree() as f64;
            let per = (d - 1.0).max(0.0) * c.ct_ct_mult + d * c.ct_pt_mult + d * c.add;
            (Category::Activations, cts * per)
        }
        NodeKind::FullyConnected { out_features, .. } => {
            (Category::Other, cts_in * *out_features as f64 * (c.ct_pt_mult + c.rotate))
        }
        NodeKind::MeanPool { window } => {
            let area = if *window == 0 {
                let s = &g.node(g.inputs_of(id)[0]).expect("input").shape;
                s[1] * s[2]
            } else {
                window * window
            };
            let steps = (usize::BITS - area.saturating_sub(1).leading_zeros()) as f64;
            (Category::Other, cts_in * (steps * (c.rotate + c.add) + c.ct_pt_mult))
        }
        NodeKind::BatchNorm => {
            let k = if p.fold_batchnorm { 0.0 } else { c.ct_pt_mult + c.add };
            (Category::Other, cts * k)
        }
        NodeKind::Add => (Category::SkipAdaptation, cts * c.add),
        NodeKind::Scale(a) => {
            let k = if *a == 0.0 || *a == 1.0 { 0.0 } else { c.ct_pt_mult };
            (Category::SkipAdaptation, cts * k)
        }
        NodeKind::Rescale { .. } => (Category::SkipAdaptation, cts * c.rescale),
        NodeKind::Bootstrap => (Category::Bootstraps, cts * c.bootstrap),
        k => {
            return Err(HeError::NotHeFriendly {
                node: id,
                kind: super::profile::kind_label(k),
            })
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub total: f64,
    /// `(category, latency, share)` in [`Category::ALL`] order.
    pub categories: Vec<(Category, f64, f64)>,
}

impl LatencyBreakdown {
    pub fn share(&self, cat: Category) -> f64 {
        self.categories.iter().find(|c| c.0 == cat).map_or(0.0, |c| c.2)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,latency,share\n");
        for (cat, v, share) in &self.categories {
            let _ = writeln!(s, "{},{v},{share}", cat.name());
        }
        s
    }
}

/// Latency per category and its share of the total. A graph with zero
/// total latency reports all shares as 0.
pub fn latency_breakdown(analysis: &Analysis) -> Result<LatencyBreakdown, HeError> {
    let mut sums = [0.0; 5];
    for n in analysis.graph.nodes() {
        let (cat, v) = node_cost(analysis, n.id)?;
        sums[Category::ALL.iter().position(|&c| c == cat).expect("known category")] += v;
    }
    let total: f64 = sums.iter().sum();
    let categories = Category::ALL
        .iter()
        .zip(sums)
        .map(|(&cat, v)| (cat, v, if total > 0.0 { v / total } else { 0.0 }))
        .collect();
    Ok(LatencyBreakdown { total, categories })
}

/// CSV `node_id,kind,cidx,bootstraps_before,category_cost` in topological
/// order; `bootstraps_before` counts the ciphertexts bootstrapped on the
/// node's direct inputs.
pub fn report_csv(analysis: &Analysis) -> Result<String, HeError> {
    let g = &analysis.graph;
    let mut s = String::from("node_id,kind,cidx,bootstraps_before,category_cost\n");
    for id in g.topo_order().expect("acyclic") {
        let node = g.node(id).expect("node");
        let boots: usize = g
            .inputs_of(id)
            .iter()
            .filter_map(|&i| g.node(i))
            .filter(|n| n.kind == NodeKind::Bootstrap)
            .map(|n| analysis.profile.ciphertexts(n.numel()))
            .sum();
        let (_, cost) = node_cost(analysis, id)?;
        let _ = writeln!(
            s,
            "{id},{},{},{boots},{cost}",
            super::profile::kind_label(&node.kind),
            analysis.cidx[&id]
        );
    }
    Ok(s)
}
