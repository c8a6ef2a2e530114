//! Static HE analysis: chain-index (CIdx) propagation with bootstrap and
//! rescale insertion, multiplication depth, bootstrap counts, skip cost
//! matrices and latency breakdowns.
//!
//! Propagation rules, applied in topological order:
//! - a node consuming `k > 0` levels whose input sits at `c` with
//!   `c + k > usable_mults` reads a bootstrapped copy of that input; one
//!   such bootstrap per producer is shared by all its consumers;
//! - an Add first bootstraps any operand above `usable_mults - reserve`,
//!   then aligns the operands: a lower skip operand (port 1) is rescaled
//!   up; a higher skip operand is bootstrapped (or the main operand is
//!   rescaled up under [`MismatchPolicy::RescaleDown`]). These nodes sit on
//!   the Add's own edges and are never shared;
//! - Add outputs the common operand level, Bootstrap resets to
//!   `bootstrap_out`, Rescale raises by its level count.

mod latency;
mod profile;

use std::collections::BTreeMap;
use std::fmt;

use crate::netgraph::{ActivationSpec, GraphError, NetworkGraph, NodeKind, SkipEdge};
use crate::polyapprox::{Interval, Polynomial};

pub use latency::{latency_breakdown, node_cost, report_csv, Category, LatencyBreakdown};
pub use profile::{depth_of_poly, ConsumeTable, CostTable, HeProfile, MismatchPolicy};

#[derive(Debug, thiserror::Error)]
pub enum HeError {
    #[error("node {node} is {kind}; HE analysis needs polynomial activations only")]
    NotHeFriendly { node: usize, kind: String },
    #[error("consume table has no entry for {0}")]
    MissingKind(String),
    #[error("node {node} consumes {levels} levels, more than a fresh ciphertext allows ({usable} usable)")]
    DepthExceeded { node: usize, levels: usize, usable: usize },
    #[error("profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-node output chain index.
pub type CIdxState = BTreeMap<usize, usize>;

/// Actions that make two Add operands level-compatible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pub bootstrap_main: bool,
    pub bootstrap_skip: bool,
    pub rescale_main: usize,
    pub rescale_skip: usize,
    pub out: usize,
}

impl Alignment {
    pub fn bootstraps(&self) -> usize {
        self.bootstrap_main as usize + self.bootstrap_skip as usize
    }

    pub fn rescales(&self) -> usize {
        (self.rescale_main > 0) as usize + (self.rescale_skip > 0) as usize
    }

    /// Latency for tensors of `cts` ciphertexts.
    pub fn cost(&self, profile: &HeProfile, cts: usize) -> f64 {
        let c = &profile.costs;
        cts as f64 * (self.bootstraps() as f64 * c.bootstrap + self.rescales() as f64 * c.rescale)
    }
}

/// Alignment of a main operand at `main` and a skip operand at `skip`.
pub fn align(main: usize, skip: usize, profile: &HeProfile) -> Alignment {
    let u = profile.usable_mults;
    let mut a = Alignment::default();
    let (mut m, mut s) = (main, skip);
    if m + profile.reserve > u {
        a.bootstrap_main = true;
        m = profile.bootstrap_out;
    }
    if s + profile.reserve > u {
        a.bootstrap_skip = true;
        s = profile.bootstrap_out;
    }
    if s > m && profile.mismatch_policy == MismatchPolicy::BootstrapOnMismatch && !a.bootstrap_skip {
        a.bootstrap_skip = true;
        s = profile.bootstrap_out;
    }
    if s < m {
        a.rescale_skip = m - s;
    } else if m < s {
        a.rescale_main = s - m;
    }
    a.out = m.max(s);
    a
}

/// Result of [`propagate_cidx`]: the graph with maintenance nodes inserted
/// and the chain index after every node.
#[derive(Clone, Debug)]
pub struct Analysis {
    /// The input graph without maintenance nodes; original ids are shared
    /// with `graph`.
    pub base: NetworkGraph,
    pub graph: NetworkGraph,
    pub cidx: CIdxState,
    pub profile: HeProfile,
    pub table: ConsumeTable,
}

/// Removes Bootstrap and Rescale nodes, reconnecting their consumers.
pub fn strip_maintenance(graph: &NetworkGraph) -> NetworkGraph {
    let mut g = graph.clone();
    let doomed: Vec<usize> = g
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Bootstrap | NodeKind::Rescale { .. }))
        .map(|n| n.id)
        .collect();
    for &id in &doomed {
        let src = g.inputs_of(id)[0];
        for (to, port) in g.consumers_of(id) {
            g.redirect(to, port, src);
        }
        g.remove_nodes(&[id]);
    }
    g
}

pub fn propagate_cidx(graph: &NetworkGraph, profile: &HeProfile, table: &ConsumeTable) -> Result<Analysis, HeError> {
    profile.check()?;
    let base = strip_maintenance(graph);
    base.validate()?;
    let mut g = base.clone();
    let order = g.topo_order().expect("validated graph is acyclic");
    let u = profile.usable_mults;
    let bout = profile.bootstrap_out;
    let mut cidx = CIdxState::new();
    let mut shared_boot: BTreeMap<usize, usize> = BTreeMap::new();

    for id in order {
        let kind = g.node(id).expect("ordered node").kind.clone();
        let out = match kind {
            NodeKind::Input => 0,
            NodeKind::Add => {
                let ins = g.inputs_of(id);
                let plan = align(cidx[&ins[0]], cidx[&ins[1]], profile);
                for (port, boot, rescale) in [
                    (0, plan.bootstrap_main, plan.rescale_main),
                    (1, plan.bootstrap_skip, plan.rescale_skip),
                ] {
                    if boot {
                        let b = g.insert_on_edge(id, port, NodeKind::Bootstrap);
                        cidx.insert(b, bout);
                    }
                    if rescale > 0 {
                        let r = g.insert_on_edge(id, port, NodeKind::Rescale { levels: rescale });
                        cidx.insert(r, plan.out);
                    }
                }
                plan.out
            }
            ref k => {
                let levels = table.levels(id, k)?;
                let src = g.inputs_of(id)[0];
                let mut c = cidx[&src];
                if levels > 0 && c + levels > u {
                    if bout + levels > u {
                        return Err(HeError::DepthExceeded { node: id, levels, usable: u - bout });
                    }
                    match shared_boot.get(&src) {
                        Some(&b) => g.redirect(id, 0, b),
                        None => {
                            let b = g.insert_on_edge(id, 0, NodeKind::Bootstrap);
                            cidx.insert(b, bout);
                            shared_boot.insert(src, b);
                        }
                    }
                    c = bout;
                }
                c + levels
            }
        };
        cidx.insert(id, out);
    }
    Ok(Analysis {
        base,
        graph: g,
        cidx,
        profile: profile.clone(),
        table: table.clone(),
    })
}

/// [`propagate_cidx`] with the consume table implied by the profile.
pub fn analyze(graph: &NetworkGraph, profile: &HeProfile) -> Result<Analysis, HeError> {
    propagate_cidx(graph, profile, &ConsumeTable::for_profile(profile))
}

impl Analysis {
    fn node_levels(&self, id: usize) -> usize {
        let n = self.graph.node(id).expect("analysed node");
        match n.kind {
            NodeKind::Rescale { levels } => levels,
            ref k => self.table.levels(id, k).unwrap_or(0),
        }
    }

    /// Longest path measured in levels consumed, where rescales count the
    /// levels they skip and bootstraps do not reset the count.
    pub fn mult_depth(&self) -> usize {
        let mut depth: BTreeMap<usize, usize> = BTreeMap::new();
        let mut best = 0;
        for id in self.graph.topo_order().expect("acyclic") {
            let base = self.graph.inputs_of(id).iter().map(|i| depth[i]).max().unwrap_or(0);
            let d = base + self.node_levels(id);
            best = best.max(d);
            depth.insert(id, d);
        }
        best
    }

    /// Bootstrap nodes in id order.
    pub fn bootstrap_nodes(&self) -> Vec<usize> {
        self.graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Bootstrap)
            .map(|n| n.id)
            .collect()
    }

    /// Ciphertext bootstraps: each Bootstrap node refreshes every
    /// ciphertext of its tensor.
    pub fn count_bootstraps(&self) -> usize {
        self.graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Bootstrap)
            .map(|n| self.profile.ciphertexts(n.numel()))
            .sum()
    }

    /// Skip placement cost between two values: add, alignment and layout
    /// surcharge, or infinity when shapes differ.
    fn pair_cost(&self, src: usize, dst: usize) -> f64 {
        let (s, d) = (self.base.node(src).expect("node"), self.base.node(dst).expect("node"));
        if s.shape != d.shape {
            return f64::INFINITY;
        }
        let cts = self.profile.ciphertexts(d.numel());
        let c = &self.profile.costs;
        let surcharge = if s.layout != d.layout { cts as f64 * c.rotate } else { 0.0 };
        cts as f64 * c.add + align(self.cidx[&dst], self.cidx[&src], &self.profile).cost(&self.profile, cts) + surcharge
    }

    /// Costs of adding a unit skip from each layer's output to each later
    /// layer's output on the analysed graph.
    pub fn cost_matrix(&self) -> CostMatrix {
        let layers = self.base.layers();
        let values: Vec<usize> = layers.iter().map(|&l| self.base.final_value(l)).collect();
        let n = layers.len();
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in i + 1..n {
                data[i * n + j] = self.pair_cost(values[i], values[j]);
            }
        }
        CostMatrix { n, data }
    }

    /// Cost of every lowered skip at the operand levels reached in this
    /// analysis: add, alignment and the layout surcharge.
    pub fn skip_costs(&self) -> Vec<(SkipEdge, f64)> {
        let base = &self.base;
        let c = &self.profile.costs;
        base.skip_adds()
            .into_iter()
            .zip(base.skips())
            .map(|(add, skip)| {
                let node = base.node(add).expect("add");
                let cts = self.profile.ciphertexts(node.numel());
                let ins = base.inputs_of(add);
                let plan = align(self.cidx[&ins[0]], self.cidx[&ins[1]], &self.profile);
                let mut cost = cts as f64 * c.add + plan.cost(&self.profile, cts);
                let cts = cts as f64;
                let src = base.inputs_of(ins[1])[0];
                if base.node(src).expect("src").layout != base.node(ins[0]).expect("main").layout {
                    cost += cts * c.rotate;
                }
                (skip, cost)
            })
            .collect()
    }
}

/// `L x L` skip costs; entries on and below the diagonal are infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Long-form CSV `i,j,cost` of the finite entries.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,cost\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.get(i, j);
                if v.is_finite() {
                    s.push_str(&format!("{i},{j},{v}\n"));
                }
            }
        }
        s
    }
}

impl fmt::Display for CostMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:8.2}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Replaces every activation by the monomial `x^degree` on `[-1, 1]`.
/// Analysis depends on degrees only, so this stands in for fitted
/// polynomials when studying architectures.
pub fn with_degree(graph: &NetworkGraph, degree: usize) -> NetworkGraph {
    let mut coeffs = vec![0.0; degree + 1];
    coeffs[degree] = 1.0;
    let p = Polynomial::new(coeffs, Interval::new(-1.0, 1.0).expect("unit interval")).expect("finite coefficients");
    graph.map_activations(|_, _| ActivationSpec::Poly(p.clone()))
}

/// Cost matrix of `graph` under `profile`.
pub fn cost_matrix(graph: &NetworkGraph, profile: &HeProfile) -> Result<CostMatrix, HeError> {
    Ok(analyze(graph, profile)?.cost_matrix())
}

/// Ciphertext bootstraps of `graph` under `profile`.
pub fn count_bootstraps(graph: &NetworkGraph, profile: &HeProfile) -> Result<usize, HeError> {
    Ok(analyze(graph, profile)?.count_bootstraps())
}

pub fn mult_depth(graph: &NetworkGraph, profile: &HeProfile) -> Result<usize, HeError> {
    Ok(analyze(graph, profile)?.mult_depth())
}
