use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{GraphError, NetworkGraph, Node, NodeKind};
use crate::numcore::{kaiming_uniform, ops, Tensor};

/// Parameters keyed by `n{node id}.{role}`.
pub type Weights = BTreeMap<String, Tensor>;

pub fn param_name(id: usize, role: &str) -> String {
    format!("n{id}.{role}")
}

/// Expected parameter shapes of `node` given its input shape.
pub(crate) fn param_shapes(node: &Node, input: &[usize]) -> Vec<(String, Vec<usize>)> {
    let id = node.id;
    match &node.kind {
        NodeKind::Conv(spec) => {
            let cin = input[0] / spec.groups;
            let mut v = vec![(
                param_name(id, "weight"),
                vec![spec.out_channels, cin, spec.kernel, spec.kernel],
            )];
            if spec.bias {
                v.push((param_name(id, "bias"), vec![spec.out_channels]));
            }
            v
        }
        NodeKind::BatchNorm => ["gamma", "beta", "mean", "var"]
            .iter()
            .map(|r| (param_name(id, r), vec![input[0]]))
            .collect(),
        NodeKind::FullyConnected { out_features, bias } => {
            let fin: usize = input.iter().product();
            let mut v = vec![(param_name(id, "weight"), vec![*out_features, fin])];
            if *bias {
                v.push((param_name(id, "bias"), vec![*out_features]));
            }
            v
        }
        _ => Vec::new(),
    }
}

fn input_shape<'a>(graph: &'a NetworkGraph, id: usize) -> &'a [usize] {
    graph
        .inputs_of(id)
        .first()
        .and_then(|&i| graph.node(i))
        .map_or(&[][..], |n| n.shape.as_slice())
}

/// Kaiming-uniform weights, zero biases and identity batch norms.
pub fn init_weights(graph: &NetworkGraph, rng: &mut ChaCha8Rng) -> Weights {
    let mut w = Weights::new();
    for node in graph.nodes() {
        for (name, dims) in param_shapes(node, input_shape(graph, node.id)) {
            let t = if name.ends_with(".weight") {
                let fan_in = dims[1..].iter().product();
                kaiming_uniform(&dims, fan_in, rng)
            } else if name.ends_with(".gamma") || name.ends_with(".var") {
                Tensor::full(&dims, 1.0)
            } else {
                Tensor::zeros(&dims)
            };
            w.insert(name, t);
        }
    }
    w
}

/// Every expected parameter is present with the right shape and nothing else.
pub fn check_weights(graph: &NetworkGraph, weights: &Weights) -> Result<(), GraphError> {
    let mut expected = BTreeMap::new();
    for node in graph.nodes() {
        for (name, dims) in param_shapes(node, input_shape(graph, node.id)) {
            expected.insert(name, dims);
        }
    }
    for (name, dims) in &expected {
        match weights.get(name) {
            None => return Err(GraphError::Weights(format!("missing {name}"))),
            Some(t) if t.dims() != dims.as_slice() => {
                return Err(GraphError::Weights(format!(
                    "{name} has shape {:?}, expected {dims:?}",
                    t.dims()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = weights.keys().find(|k| !expected.contains_key(*k)) {
        return Err(GraphError::Weights(format!("unexpected entry {extra}")));
    }
    Ok(())
}

fn get<'a>(weights: &'a Weights, id: usize, role: &str) -> Result<&'a Tensor, GraphError> {
    let name = param_name(id, role);
    weights.get(&name).ok_or(GraphError::Weights(format!("missing {name}")))
}

/// Output of one node on a batch.
pub(crate) fn forward_node(node: &Node, inputs: &[&Tensor], weights: &Weights) -> Result<Tensor, GraphError> {
    let id = node.id;
    let x = inputs.first().copied();
    let one = || x.ok_or_else(|| GraphError::Build(format!("node {id} has no input")));
    Ok(match &node.kind {
        NodeKind::Input => return Err(GraphError::Build("Input is fed, not computed".into())),
        NodeKind::Conv(spec) => {
            let b = if spec.bias { Some(get(weights, id, "bias")?) } else { None };
            ops::conv2d(one()?, get(weights, id, "weight")?, b, spec.geometry())?
        }
        NodeKind::BatchNorm => ops::batch_norm_with_stats(
            one()?,
            get(weights, id, "gamma")?,
            get(weights, id, "beta")?,
            get(weights, id, "mean")?.data(),
            get(weights, id, "var")?.data(),
        )?,
        NodeKind::MeanPool { window } => {
            let x = one()?;
            let (kh, kw) = if *window == 0 { (x.dims()[2], x.dims()[3]) } else { (*window, *window) };
            ops::mean_pool2d(x, kh, kw)?
        }
        NodeKind::FullyConnected { bias, .. } => {
            let x = one()?;
            let n = x.dims()[0];
            let flat = x.reshape(&[n, x.len() / n.max(1)])?;
            let b = if *bias { Some(get(weights, id, "bias")?) } else { None };
            ops::linear(&flat, get(weights, id, "weight")?, b)?
        }
        NodeKind::Activation(spec) => spec.apply(one()?)?,
        NodeKind::Add => inputs[0].zip_map(inputs[1], |a, b| a + b)?,
        NodeKind::Scale(a) => {
            let a = *a;
            one()?.map(|v| a * v)
        }
        NodeKind::Bootstrap | NodeKind::Rescale { .. } | NodeKind::Output => one()?.clone(),
        k @ (NodeKind::MaxPool { .. } | NodeKind::LayerNorm) => {
            return Err(GraphError::Rejected {
                kind: k.name().into(),
                hint: k.rejection_hint().unwrap_or_default().into(),
            })
        }
    })
}

/// Evaluates every node on a batch `[N, ...input shape]`. `hook` sees each
/// computed value (including the encoded input) and may replace it.
pub fn evaluate_nodes(
    graph: &NetworkGraph,
    weights: &Weights,
    input: &Tensor,
    hook: &mut dyn FnMut(&Node, Tensor) -> Result<Tensor, GraphError>,
) -> Result<BTreeMap<usize, Tensor>, GraphError> {
    let order = graph
        .topo_order()
        .ok_or_else(|| GraphError::Invalid(vec!["graph contains a cycle".into()]))?;
    let mut values: BTreeMap<usize, Tensor> = BTreeMap::new();
    for id in order {
        let node = graph.node(id).expect("topo ids exist");
        let value = if node.kind == NodeKind::Input {
            if input.dims().len() != node.shape.len() + 1 || input.dims()[1..] != node.shape[..] {
                return Err(GraphError::Build(format!(
                    "input batch {:?} does not match declared shape {:?}",
                    input.dims(),
                    node.shape
                )));
            }
            input.clone()
        } else {
            let ins = graph.inputs_of(id);
            let xs: Vec<&Tensor> = ins.iter().map(|i| &values[i]).collect();
            forward_node(node, &xs, weights)?
        };
        let value = hook(node, value)?;
        values.insert(id, value);
    }
    Ok(values)
}

/// Value of the Output node on a batch.
pub fn evaluate(graph: &NetworkGraph, weights: &Weights, input: &Tensor) -> Result<Tensor, GraphError> {
    let out = graph
        .output_id()
        .ok_or_else(|| GraphError::Invalid(vec!["graph has no Output".into()]))?;
    let mut values = evaluate_nodes(graph, weights, input, &mut |_, t| Ok(t))?;
    Ok(values.remove(&out).expect("output evaluated"))
}
