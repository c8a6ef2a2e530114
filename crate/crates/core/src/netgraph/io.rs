//! Graph JSON and the PCKT weight container.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{ActivationSpec, ConvSpec, Edge, GraphError, NetworkGraph, Node, NodeKind, SkipEdge, Weights};
use crate::numcore::Tensor;
use crate::polyapprox::Polynomial;

const GRAPH_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PCKT";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    #[serde(default)]
    skips: Vec<SkipRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    kind: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    from: usize,
    to: usize,
    port: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkipRecord {
    i: usize,
    j: usize,
    a: f64,
}

fn attrs_of(node: &Node) -> Map<String, Value> {
    let v = match &node.kind {
        NodeKind::Conv(s) => json!({
            "out_channels": s.out_channels, "kernel": s.kernel, "stride": s.stride,
            "pad": s.pad, "groups": s.groups, "bias": s.bias,
        }),
        NodeKind::MeanPool { window } | NodeKind::MaxPool { window } => json!({ "window": window }),
        NodeKind::FullyConnected { out_features, bias } => json!({ "out_features": out_features, "bias": bias }),
        NodeKind::Activation(ActivationSpec::Relu) => json!({ "fn": "relu" }),
        NodeKind::Activation(ActivationSpec::Gelu) => json!({ "fn": "gelu" }),
        NodeKind::Activation(ActivationSpec::Poly(p)) => json!({ "fn": "poly", "poly": p.to_record() }),
        NodeKind::Scale(a) => json!({ "a": a }),
        NodeKind::Rescale { levels } => json!({ "levels": levels }),
        _ => json!({}),
    };
    let mut m = match v {
        Value::Object(m) => m,
        _ => unreachable!("attrs are objects"),
    };
    if node.layout != 0 {
        m.insert("layout".into(), json!(node.layout));
    }
    m
}

struct Attrs<'a> {
    id: usize,
    map: &'a Map<String, Value>,
}

impl Attrs<'_> {
    fn missing(&self, key: &str, what: &str) -> GraphError {
        GraphError::Format(format!("node {}: attribute {key:?} must be {what}", self.id))
    }

    fn usize(&self, key: &str) -> Result<usize, GraphError> {
        self.map
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| self.missing(key, "a non-negative integer"))
    }

    fn bool(&self, key: &str) -> Result<bool, GraphError> {
        self.map
            .get(key)
            .and_then(Value::as_bool)
            .ok_or_else(|| self.missing(key, "a boolean"))
    }

    fn f64(&self, key: &str) -> Result<f64, GraphError> {
        self.map
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| self.missing(key, "a number"))
    }

    fn str(&self, key: &str) -> Result<&str, GraphError> {
        self.map
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| self.missing(key, "a string"))
    }
}

fn kind_from_record(rec: &NodeRecord) -> Result<NodeKind, GraphError> {
    let a = Attrs {
        id: rec.id,
        map: &rec.attrs,
    };
    Ok(match rec.kind.as_str() {
        "Input" => NodeKind::Input,
        "Conv" => NodeKind::Conv(ConvSpec {
            out_channels: a.usize("out_channels")?,
            kernel: a.usize("kernel")?,
            stride: a.usize("stride")?,
            pad: a.usize("pad")?,
            groups: a.usize("groups")?,
            bias: a.bool("bias")?,
        }),
        "BatchNorm" => NodeKind::BatchNorm,
        "MeanPool" => NodeKind::MeanPool {
            window: a.usize("window")?,
        },
        "FullyConnected" => NodeKind::FullyConnected {
            out_features: a.usize("out_features")?,
            bias: a.bool("bias")?,
        },
        "Activation" => NodeKind::Activation(match a.str("fn")? {
            "relu" => ActivationSpec::Relu,
            "gelu" => ActivationSpec::Gelu,
            "poly" => ActivationSpec::Poly(
                Polynomial::from_record(a.str("poly")?)
                    .map_err(|e| GraphError::Format(format!("node {}: {e}", rec.id)))?,
            ),
            other => return Err(GraphError::Format(format!("node {}: unknown activation {other:?}", rec.id))),
        }),
        "Add" => NodeKind::Add,
        "Scale" => NodeKind::Scale(a.f64("a")?),
        "Bootstrap" => NodeKind::Bootstrap,
        "Rescale" => NodeKind::Rescale {
            levels: a.usize("levels")?,
        },
        "Output" => NodeKind::Output,
        "MaxPool" | "LayerNorm" => {
            let k = if rec.kind == "MaxPool" {
                NodeKind::MaxPool { window: 0 }
            } else {
                NodeKind::LayerNorm
            };
            return Err(GraphError::Rejected {
                kind: rec.kind.clone(),
                hint: k.rejection_hint().unwrap_or_default().into(),
            });
        }
        other => return Err(GraphError::Format(format!("node {}: unknown kind {other:?}", rec.id))),
    })
}

pub fn graph_to_json(graph: &NetworkGraph) -> String {
    let file = GraphFile {
        version: GRAPH_VERSION,
        nodes: graph
            .nodes()
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                kind: n.kind.name().into(),
                attrs: attrs_of(n),
                shape: n.shape.clone(),
            })
            .collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| EdgeRecord {
                from: e.from,
                to: e.to,
                port: e.port,
            })
            .collect(),
        skips: graph
            .skips()
            .into_iter()
            .map(|s| SkipRecord { i: s.i, j: s.j, a: s.a })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("graph records serialize");
    s.push('\n');
    s
}

/// Parses and validates a graph. Skips listed in `skips` that are not
/// already present as `Scale -> Add` pairs are lowered.
pub fn graph_from_json(text: &str) -> Result<NetworkGraph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
    if file.version != GRAPH_VERSION {
        return Err(GraphError::Format(format!(
            "graph version {} unsupported (expected {GRAPH_VERSION})",
            file.version
        )));
    }
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for rec in &file.nodes {
        let layout = match rec.attrs.get("layout") {
            None => 0,
            Some(v) => v
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| GraphError::Format(format!("node {}: bad layout", rec.id)))?,
        };
        nodes.push(Node {
            id: rec.id,
            kind: kind_from_record(rec)?,
            shape: rec.shape.clone(),
            layout,
        });
    }
    let edges = file
        .edges
        .iter()
        .map(|e| Edge {
            from: e.from,
            to: e.to,
            port: e.port,
        })
        .collect();
    let mut g = NetworkGraph::from_parts(nodes, edges);
    g.validate()?;
    let present = g.skips();
    for s in &file.skips {
        match present.iter().find(|p| p.i == s.i && p.j == s.j) {
            Some(p) if p.a.to_bits() == s.a.to_bits() => {}
            Some(p) => {
                return Err(GraphError::Format(format!(
                    "skip {}->{} listed with a = {} but the graph has a = {}",
                    s.i, s.j, s.a, p.a
                )))
            }
            None => g = g.with_skip(SkipEdge { i: s.i, j: s.j, a: s.a })?.0,
        }
    }
    g.validate()?;
    Ok(g)
}

pub fn save_graph(graph: &NetworkGraph, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, graph_to_json(graph))?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<NetworkGraph, GraphError> {
    graph_from_json(&std::fs::read_to_string(path)?)
}

pub fn weights_to_bytes(weights: &Weights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for (name, t) in weights {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GraphError::Format(format!("weights file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<Weights, GraphError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GraphError::Format("weights file has bad magic (expected PCKT)".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(GraphError::Format(format!(
            "weights version {version} unsupported (expected {WEIGHTS_VERSION})"
        )));
    }
    let count = r.u32()?;
    let mut weights = Weights::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| GraphError::Format("weight name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            dims.push(r.u64()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| GraphError::Format(format!("{name}: dims {dims:?} overflow")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| GraphError::Format(format!("{name}: too large")))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(dims, data)?;
        if weights.insert(name.clone(), t).is_some() {
            return Err(GraphError::Format(format!("duplicate weight entry {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(GraphError::Format(format!(
            "{} trailing bytes after {count} entries",
            bytes.len() - r.pos
        )));
    }
    Ok(weights)
}

pub fn save_weights(weights: &Weights, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, weights_to_bytes(weights))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Weights, GraphError> {
    weights_from_bytes(&std::fs::read(path)?)
}
