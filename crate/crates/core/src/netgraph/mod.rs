//! Network DAG shared by the trainer, the HE analyzer and the simulator.
//!
//! Nodes carry per-sample output shapes (batch dimension excluded) and are
//! kept sorted by id. Ids are stable across transformations so weight names
//! (`n{id}.weight`, ...) survive skip insertion and pruning.

mod builders;
mod eval;
mod io;
mod skips;

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use crate::numcore::{ops, ConvGeometry, NumError, Tensor};
use crate::polyapprox::Polynomial;

pub use builders::{build_toy_convnext, build_toy_resnet, ConvNextSpec, ResNetSpec};
pub(crate) use eval::forward_node;
pub use eval::{evaluate, evaluate_nodes, init_weights, param_name, check_weights, Weights};
pub use io::{
    graph_from_json, graph_to_json, load_graph, load_weights, save_graph, save_weights, weights_from_bytes,
    weights_to_bytes,
};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    Build(String),
    #[error("{kind} is not supported: {hint}")]
    Rejected { kind: String, hint: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActivationSpec {
    Relu,
    Gelu,
    Poly(Polynomial),
}

impl ActivationSpec {
    pub fn is_poly(&self) -> bool {
        matches!(self, ActivationSpec::Poly(_))
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor, NumError> {
        match self {
            ActivationSpec::Relu => Ok(x.map(ops::relu)),
            ActivationSpec::Gelu => Ok(x.map(ops::gelu)),
            ActivationSpec::Poly(p) => p.eval_tensor(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, "same" padding for odd kernels, no bias.
    pub fn same(out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride: 1,
            pad: kernel / 2,
            groups: 1,
            bias: false,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            stride: self.stride,
            pad: self.pad,
            groups: self.groups,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input,
    Conv(ConvSpec),
    /// Inference-mode batch normalisation over the channel axis.
    BatchNorm,
    /// Non-overlapping average pooling; window 0 pools globally.
    MeanPool { window: usize },
    FullyConnected { out_features: usize, bias: bool },
    Activation(ActivationSpec),
    Add,
    Scale(f64),
    Bootstrap,
    /// Raises the chain index by `levels` without touching values.
    Rescale { levels: usize },
    Output,
    MaxPool { window: usize },
    LayerNorm,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input => "Input",
            NodeKind::Conv(_) => "Conv",
            NodeKind::BatchNorm => "BatchNorm",
            NodeKind::MeanPool { .. } => "MeanPool",
            NodeKind::FullyConnected { .. } => "FullyConnected",
            NodeKind::Activation(_) => "Activation",
            NodeKind::Add => "Add",
            NodeKind::Scale(_) => "Scale",
            NodeKind::Bootstrap => "Bootstrap",
            NodeKind::Rescale { .. } => "Rescale",
            NodeKind::Output => "Output",
            NodeKind::MaxPool { .. } => "MaxPool",
            NodeKind::LayerNorm => "LayerNorm",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Input => 0,
            NodeKind::Add => 2,
            _ => 1,
        }
    }

    /// Substitution hint for kinds that have no HE-friendly evaluation.
    pub fn rejection_hint(&self) -> Option<&'static str> {
        match self {
            NodeKind::MaxPool { .. } => Some("replace MaxPool with MeanPool"),
            NodeKind::LayerNorm => Some("replace LayerNorm with BatchNorm"),
            _ => None,
        }
    }

    /// Nodes that make up the layer list; skip plumbing and HE maintenance
    /// nodes are excluded so layer indices survive skip edits.
    pub fn is_layer(&self) -> bool {
        !matches!(
            self,
            NodeKind::Output | NodeKind::Add | NodeKind::Scale(_) | NodeKind::Bootstrap | NodeKind::Rescale { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub shape: Vec<usize>,
    /// Abstract packing layout; skips between nodes of different layouts pay
    /// a reshuffling surcharge.
    pub layout: u32,
}

impl Node {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub port: usize,
}

/// Symbolic residual from layer `i`'s output to layer `j`'s output, scaled
/// by `a` on the skip branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkipEdge {
    pub i: usize,
    pub j: usize,
    pub a: f64,
}

/// Output shape of `kind` applied to `inputs`.
pub fn infer_shape(kind: &NodeKind, inputs: &[&[usize]]) -> Result<Vec<usize>, String> {
    if inputs.len() != kind.arity() {
        return Err(format!("{} takes {} inputs, got {}", kind.name(), kind.arity(), inputs.len()));
    }
    let chw = |s: &[usize]| -> Result<(usize, usize, usize), String> {
        match s {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(format!("{} needs a [C, H, W] input, got {s:?}", kind.name())),
        }
    };
    match kind {
        NodeKind::Input => Err("Input shape is declared, not inferred".into()),
        NodeKind::Conv(spec) => {
            let (c, h, w) = chw(inputs[0])?;
            if spec.groups == 0 || c % spec.groups != 0 || spec.out_channels % spec.groups != 0 {
                return Err(format!(
                    "Conv groups {} must divide in {c} and out {}",
                    spec.groups, spec.out_channels
                ));
            }
            if spec.kernel == 0 || spec.out_channels == 0 {
                return Err("Conv needs a positive kernel and channel count".into());
            }
            let (oh, ow) = ops::conv_output_hw(h, w, spec.kernel, spec.kernel, spec.geometry())
                .ok_or_else(|| format!("Conv kernel {} does not fit {h}x{w}", spec.kernel))?;
            Ok(vec![spec.out_channels, oh, ow])
        }
        NodeKind::MeanPool { window } | NodeKind::MaxPool { window } => {
            let (c, h, w) = chw(inputs[0])?;
            if *window == 0 {
                return Ok(vec![c, 1, 1]);
            }
            if h % window != 0 || w % window != 0 {
                return Err(format!("pool window {window} does not tile {h}x{w}"));
            }
            Ok(vec![c, h / window, w / window])
        }
        NodeKind::FullyConnected { out_features, .. } => {
            if *out_features == 0 {
                return Err("FullyConnected needs out_features > 0".into());
            }
            Ok(vec![*out_features])
        }
        NodeKind::BatchNorm | NodeKind::LayerNorm => {
            if inputs[0].is_empty() {
                return Err(format!("{} needs a channel axis", kind.name()));
            }
            Ok(inputs[0].to_vec())
        }
        NodeKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(format!("Add operands differ: {:?} vs {:?}", inputs[0], inputs[1]));
            }
            Ok(inputs[0].to_vec())
        }
        NodeKind::Scale(a) => {
            if !(0.0..=1.0).contains(a) {
                return Err(format!("Scale factor {a} outside [0, 1]"));
            }
            Ok(inputs[0].to_vec())
        }
        NodeKind::Activation(_)
        | NodeKind::Bootstrap
        | NodeKind::Rescale { .. }
        | NodeKind::Output => Ok(inputs[0].to_vec()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl NetworkGraph {
    /// Assembles a graph without validating it; see [`NetworkGraph::validate`].
    pub fn from_parts(mut nodes: Vec<Node>, mut edges: Vec<Edge>) -> Self {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by_key(|e| (e.to, e.port, e.from));
        NetworkGraph { nodes, edges }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: usize) -> Option<&Node> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|k| &self.nodes[k])
    }

    pub(crate) fn node_mut(&mut self, id: usize) -> Option<&mut Node> {
        match self.nodes.binary_search_by_key(&id, |n| n.id) {
            Ok(k) => Some(&mut self.nodes[k]),
            Err(_) => None,
        }
    }

    fn expect_node(&self, id: usize) -> &Node {
        self.node(id).unwrap_or_else(|| panic!("node {id} not in graph"))
    }

    /// Producers of `id` in port order.
    pub fn inputs_of(&self, id: usize) -> Vec<usize> {
        let mut ins: Vec<&Edge> = self.edges.iter().filter(|e| e.to == id).collect();
        ins.sort_by_key(|e| e.port);
        ins.into_iter().map(|e| e.from).collect()
    }

    /// `(consumer, port)` pairs reading `id`, sorted.
    pub fn consumers_of(&self, id: usize) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.from == id)
            .map(|e| (e.to, e.port))
            .collect()
    }

    pub fn input_id(&self) -> Option<usize> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Input).map(|n| n.id)
    }

    pub fn output_id(&self) -> Option<usize> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Output).map(|n| n.id)
    }

    pub fn next_id(&self) -> usize {
        self.nodes.last().map_or(0, |n| n.id + 1)
    }

    /// Kahn's algorithm with the smallest ready id first. `None` on a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let mut indeg: BTreeMap<usize, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in &self.edges {
            if !indeg.contains_key(&e.from) {
                continue;
            }
            if let Some(d) = indeg.get_mut(&e.to) {
                *d += 1;
                out.entry(e.from).or_default().push(e.to);
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            indeg.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| Reverse(id)).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &to in out.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indeg.get_mut(&to).expect("known node");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(to));
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    /// Layer list: topological order of the non-plumbing nodes.
    pub fn layers(&self) -> Vec<usize> {
        self.topo_order()
            .unwrap_or_default()
            .into_iter()
            .filter(|&id| self.expect_node(id).kind.is_layer())
            .collect()
    }

    pub fn activation_ids(&self) -> Vec<usize> {
        self.layers()
            .into_iter()
            .filter(|&id| matches!(self.expect_node(id).kind, NodeKind::Activation(_)))
            .collect()
    }

    pub fn count_kind(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    /// Every activation is a polynomial and no rejected kind is present.
    pub fn is_he_friendly(&self) -> bool {
        self.nodes.iter().all(|n| match &n.kind {
            NodeKind::Activation(a) => a.is_poly(),
            k => k.rejection_hint().is_none(),
        })
    }

    /// All structural violations, or `Ok` for a well-formed graph.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut v = Vec::new();
        for w in self.nodes.windows(2) {
            if w[0].id == w[1].id {
                v.push(format!("duplicate node id {}", w[0].id));
            }
        }
        let inputs = self.count_kind(|k| *k == NodeKind::Input);
        if inputs != 1 {
            v.push(format!("expected exactly one Input node, found {inputs}"));
        }
        let outputs = self.count_kind(|k| *k == NodeKind::Output);
        if outputs != 1 {
            v.push(format!("expected exactly one Output node, found {outputs}"));
        }
        for e in &self.edges {
            for end in [e.from, e.to] {
                if self.node(end).is_none() {
                    v.push(format!("edge {}->{} port {} references missing node {end}", e.from, e.to, e.port));
                }
            }
            if let Some(n) = self.node(e.to) {
                if e.port >= n.kind.arity() {
                    v.push(format!("node {} ({}) has no port {}", n.id, n.kind.name(), e.port));
                }
            }
            if self.node(e.from).is_some_and(|n| n.kind == NodeKind::Output) {
                v.push(format!("Output node {} has a consumer", e.from));
            }
        }
        for n in &self.nodes {
            if let Some(hint) = n.kind.rejection_hint() {
                v.push(format!("node {} is {}: {hint}", n.id, n.kind.name()));
            }
            let mut ports: Vec<usize> = self.edges.iter().filter(|e| e.to == n.id).map(|e| e.port).collect();
            ports.sort_unstable();
            let want: Vec<usize> = (0..n.kind.arity()).collect();
            if ports != want {
                v.push(format!(
                    "node {} ({}) has ports {ports:?} connected, expected {want:?}",
                    n.id,
                    n.kind.name()
                ));
            }
        }
        if self.topo_order().is_none() {
            v.push("graph contains a cycle".into());
        }
        if v.is_empty() {
            for n in &self.nodes {
                if n.kind == NodeKind::Input || n.kind.rejection_hint().is_some() {
                    continue;
                }
                let ins = self.inputs_of(n.id);
                let shapes: Vec<&[usize]> = ins.iter().map(|&i| self.expect_node(i).shape.as_slice()).collect();
                match infer_shape(&n.kind, &shapes) {
                    Ok(s) if s == n.shape => {}
                    Ok(s) => v.push(format!("node {} declares shape {:?} but inputs give {s:?}", n.id, n.shape)),
                    Err(msg) => v.push(format!("node {}: {msg}", n.id)),
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(GraphError::Invalid(v))
        }
    }

    /// Rewrites every activation with `f(node id, current spec)`.
    pub fn map_activations(&self, mut f: impl FnMut(usize, &ActivationSpec) -> ActivationSpec) -> NetworkGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            if let NodeKind::Activation(spec) = &n.kind {
                n.kind = NodeKind::Activation(f(n.id, spec));
            }
        }
        g
    }

    pub(crate) fn push_node(&mut self, kind: NodeKind, shape: Vec<usize>, layout: u32) -> usize {
        let id = self.next_id();
        self.nodes.push(Node { id, kind, shape, layout });
        id
    }

    pub(crate) fn push_edge(&mut self, from: usize, to: usize, port: usize) {
        let e = Edge { from, to, port };
        let at = self.edges.partition_point(|x| (x.to, x.port, x.from) < (to, port, from));
        self.edges.insert(at, e);
    }

    /// Points the edge feeding `(to, port)` at `from` instead.
    pub(crate) fn redirect(&mut self, to: usize, port: usize, from: usize) {
        for e in &mut self.edges {
            if e.to == to && e.port == port {
                e.from = from;
            }
        }
        self.edges.sort_by_key(|e| (e.to, e.port, e.from));
    }

    /// Inserts a single-input node of `kind` on the edge into `(to, port)`.
    pub(crate) fn insert_on_edge(&mut self, to: usize, port: usize, kind: NodeKind) -> usize {
        let from = self.inputs_of(to)[port];
        let src = self.expect_node(from);
        let (shape, layout) = (src.shape.clone(), src.layout);
        let id = self.push_node(kind, shape, layout);
        self.redirect(to, port, id);
        self.push_edge(from, id, 0);
        id
    }

    pub(crate) fn remove_nodes(&mut self, ids: &[usize]) {
        self.nodes.retain(|n| !ids.contains(&n.id));
        self.edges.retain(|e| !ids.contains(&e.from) && !ids.contains(&e.to));
    }
}

impl fmt::Display for NetworkGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for id in self.topo_order().unwrap_or_else(|| self.nodes.iter().map(|n| n.id).collect()) {
            let n = self.expect_node(id);
            writeln!(f, "{:>4} {:<15} {:?} <- {:?}", n.id, n.kind.name(), n.shape, self.inputs_of(id))?;
        }
        Ok(())
    }
}

/// Incremental construction with shape inference.
#[derive(Default)]
pub struct GraphBuilder {
    graph: Option<NetworkGraph>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            graph: Some(NetworkGraph::from_parts(Vec::new(), Vec::new())),
        }
    }

    fn g(&mut self) -> &mut NetworkGraph {
        self.graph.as_mut().expect("builder already finished")
    }

    pub fn input(&mut self, shape: &[usize]) -> usize {
        self.g().push_node(NodeKind::Input, shape.to_vec(), 0)
    }

    pub fn add(&mut self, kind: NodeKind, inputs: &[usize]) -> Result<usize, GraphError> {
        let g = self.g();
        let mut shapes = Vec::with_capacity(inputs.len());
        for &i in inputs {
            let n = g.node(i).ok_or_else(|| GraphError::Build(format!("unknown input node {i}")))?;
            shapes.push(n.shape.as_slice());
        }
        let shape = infer_shape(&kind, &shapes).map_err(GraphError::Build)?;
        let layout = inputs.first().map_or(0, |&i| g.expect_node(i).layout);
        let id = g.push_node(kind, shape, layout);
        for (port, &i) in inputs.iter().enumerate() {
            g.push_edge(i, id, port);
        }
        Ok(id)
    }

    pub fn set_layout(&mut self, id: usize, layout: u32) {
        if let Some(n) = self.g().node_mut(id) {
            n.layout = layout;
        }
    }

    pub fn finish(mut self) -> Result<NetworkGraph, GraphError> {
        let g = self.graph.take().expect("builder already finished");
        g.validate()?;
        Ok(g)
    }
}
