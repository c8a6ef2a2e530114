//! Skip connections as `Scale(a) -> Add` pairs in the explicit graph.
//!
//! A skip Add takes the main branch on port 0 and a Scale node, used by
//! nothing else, on port 1. Several skips ending at one layer chain their
//! Adds on port 0.

use std::collections::BTreeSet;

use super::{GraphError, NetworkGraph, NodeKind, SkipEdge};

impl NetworkGraph {
    /// If `add` is a skip Add, returns its Scale node.
    pub fn skip_scale_of(&self, add: usize) -> Option<usize> {
        if self.node(add)?.kind != NodeKind::Add {
            return None;
        }
        let ins = self.inputs_of(add);
        let s = *ins.get(1)?;
        let scale = self.node(s)?;
        (matches!(scale.kind, NodeKind::Scale(_)) && self.consumers_of(s).len() == 1).then_some(s)
    }

    /// Skip Adds in id order.
    pub fn skip_adds(&self) -> Vec<usize> {
        self.nodes()
            .iter()
            .filter(|n| self.skip_scale_of(n.id).is_some())
            .map(|n| n.id)
            .collect()
    }

    /// Walks port 0 back through skip Adds to the layer node underneath.
    pub fn base_layer(&self, mut id: usize) -> usize {
        while self.skip_scale_of(id).is_some() {
            id = self.inputs_of(id)[0];
        }
        id
    }

    /// Follows skip Adds downstream of layer `id` to the value its
    /// consumers actually read.
    pub fn final_value(&self, mut id: usize) -> usize {
        loop {
            let next = self
                .consumers_of(id)
                .into_iter()
                .find(|&(to, port)| port == 0 && self.skip_scale_of(to).is_some());
            match next {
                Some((to, _)) => id = to,
                None => return id,
            }
        }
    }

    /// The lowered skips, recovered as layer-index triples.
    pub fn skips(&self) -> Vec<SkipEdge> {
        let layers = self.layers();
        let index = |id: usize| layers.iter().position(|&l| l == id);
        self.skip_adds()
            .into_iter()
            .filter_map(|add| {
                let scale = self.skip_scale_of(add)?;
                let a = match self.node(scale)?.kind {
                    NodeKind::Scale(a) => a,
                    _ => return None,
                };
                let src = self.base_layer(self.inputs_of(scale)[0]);
                let dst = self.base_layer(self.inputs_of(add)[0]);
                Some(SkipEdge {
                    i: index(src)?,
                    j: index(dst)?,
                    a,
                })
            })
            .collect()
    }

    /// Lowers one skip into `Scale(a) -> Add` after layer `j`, returning the
    /// new graph and the id of the Add.
    pub fn with_skip(&self, skip: SkipEdge) -> Result<(NetworkGraph, usize), GraphError> {
        let layers = self.layers();
        if skip.i >= skip.j || skip.j >= layers.len() {
            return Err(GraphError::Build(format!(
                "skip {}->{} invalid for {} layers",
                skip.i,
                skip.j,
                layers.len()
            )));
        }
        if !(0.0..=1.0).contains(&skip.a) {
            return Err(GraphError::Build(format!("skip scale {} outside [0, 1]", skip.a)));
        }
        let src = self.final_value(layers[skip.i]);
        let dst = self.final_value(layers[skip.j]);
        let (src_node, dst_node) = (self.expect_node(src), self.expect_node(dst));
        if src_node.shape != dst_node.shape {
            return Err(GraphError::Build(format!(
                "skip {}->{} joins shapes {:?} and {:?}",
                skip.i, skip.j, src_node.shape, dst_node.shape
            )));
        }
        let (shape, src_layout, dst_layout) = (src_node.shape.clone(), src_node.layout, dst_node.layout);
        let mut g = self.clone();
        let consumers = g.consumers_of(dst);
        let scale = g.push_node(NodeKind::Scale(skip.a), shape.clone(), src_layout);
        g.push_edge(src, scale, 0);
        let add = g.push_node(NodeKind::Add, shape, dst_layout);
        for (to, port) in consumers {
            g.redirect(to, port, add);
        }
        g.push_edge(dst, add, 0);
        g.push_edge(scale, add, 1);
        g.edges.sort_by_key(|e| (e.to, e.port, e.from));
        Ok((g, add))
    }

    pub fn with_skips(&self, skips: &[SkipEdge]) -> Result<NetworkGraph, GraphError> {
        let mut g = self.clone();
        for &s in skips {
            g = g.with_skip(s)?.0;
        }
        Ok(g)
    }

    /// Sets every skip's scale to `a`.
    pub fn apply_skip_scale(&self, a: f64) -> Result<NetworkGraph, GraphError> {
        if !(0.0..=1.0).contains(&a) {
            return Err(GraphError::Build(format!("skip scale {a} outside [0, 1]")));
        }
        let mut g = self.clone();
        for add in self.skip_adds() {
            let s = self.skip_scale_of(add).expect("skip add has a scale");
            g.node_mut(s).expect("scale exists").kind = NodeKind::Scale(a);
        }
        Ok(g)
    }

    /// Drops skips whose scale is 0, then any node that no longer reaches
    /// the Output.
    pub fn prune(&self) -> NetworkGraph {
        let mut g = self.clone();
        loop {
            let dead = g.skip_adds().into_iter().find(|&add| {
                let s = g.skip_scale_of(add).expect("skip add has a scale");
                g.node(s).is_some_and(|n| n.kind == NodeKind::Scale(0.0))
            });
            let Some(add) = dead else { break };
            let scale = g.skip_scale_of(add).expect("skip add has a scale");
            let main = g.inputs_of(add)[0];
            for (to, port) in g.consumers_of(add) {
                g.redirect(to, port, main);
            }
            g.remove_nodes(&[add, scale]);
        }
        if let Some(out) = g.output_id() {
            let mut live: BTreeSet<usize> = BTreeSet::new();
            let mut stack = vec![out];
            while let Some(id) = stack.pop() {
                if live.insert(id) {
                    stack.extend(g.inputs_of(id));
                }
            }
            let dead: Vec<usize> = g
                .nodes()
                .iter()
                .filter(|n| !live.contains(&n.id) && n.kind != NodeKind::Input)
                .map(|n| n.id)
                .collect();
            g.remove_nodes(&dead);
        }
        g.edges.sort_by_key(|e| (e.to, e.port, e.from));
        g
    }

    /// The same network with every skip removed.
    pub fn without_skips(&self) -> NetworkGraph {
        self.apply_skip_scale(0.0).expect("0 is a valid scale").prune()
    }
}
