#![allow(dead_code)]

//! Brute-force chain-index interpreter and random DAG generator.

use std::collections::{BTreeMap, BTreeSet};

use polyckt::hecost::*;
use polyckt::netgraph::*;
use polyckt::numcore::seeded_rng;
use polyckt::polyapprox::{Interval, Polynomial};
use rand::Rng;

fn poly(degree: usize) -> ActivationSpec {
    let mut c = vec![0.0; degree + 1];
    c[degree] = 1.0;
    ActivationSpec::Poly(Polynomial::new(c, Interval::new(-1.0, 1.0).unwrap()).unwrap())
}

fn conv1x1(c: usize) -> NodeKind {
    NodeKind::Conv(ConvSpec::same(c, 1))
}

#[derive(Debug, PartialEq, Eq, Clone)]
pub enum Fix {
    Boot,
    Rescale(usize),
}

pub struct Oracle {
    pub level: BTreeMap<usize, usize>,
    /// Producers refreshed for level-consuming readers.
    pub refreshed: BTreeSet<usize>,
    /// Readers that see a refreshed producer.
    pub readers: BTreeSet<usize>,
    /// Fixes per (add, port), producer side first.
    pub fixes: BTreeMap<(usize, usize), Vec<Fix>>,
    pub ciphertexts: usize,
}

/// Step-by-step interpreter over the raw rules, evaluated by memoised
/// recursion on producers.
pub fn oracle(g: &NetworkGraph, p: &HeProfile) -> Oracle {
    let u = p.usable_mults;
    let cts = |id: usize| g.node(id).unwrap().numel().div_ceil(p.slots);
    let cost = |k: &NodeKind| -> usize {
        match k {
            NodeKind::Conv(_) | NodeKind::FullyConnected { .. } => 1,
            NodeKind::BatchNorm => usize::from(!p.fold_batchnorm),
            NodeKind::Scale(a) => usize::from(*a != 0.0 && *a != 1.0),
            NodeKind::Activation(ActivationSpec::Poly(q)) => {
                let mut k = 0;
                while (1usize << k) < q.degree() + 1 {
                    k += 1;
                }
                k
            }
            _ => 0,
        }
    };
    let mut o = Oracle {
        level: BTreeMap::new(),
        refreshed: BTreeSet::new(),
        readers: BTreeSet::new(),
        fixes: BTreeMap::new(),
        ciphertexts: 0,
    };
    fn visit(
        id: usize,
        g: &NetworkGraph,
        p: &HeProfile,
        u: usize,
        cost: &dyn Fn(&NodeKind) -> usize,
        cts: &dyn Fn(usize) -> usize,
        o: &mut Oracle,
    ) -> usize {
        if let Some(&l) = o.level.get(&id) {
            return l;
        }
        let node = g.node(id).unwrap();
        let ins = g.inputs_of(id);
        let lv: Vec<usize> = ins.iter().map(|&i| visit(i, g, p, u, cost, cts, o)).collect();
        let out = match node.kind {
            NodeKind::Input => 0,
            NodeKind::Add => {
                let mut main = lv[0];
                let mut skip = lv[1];
                let mut f0 = Vec::new();
                let mut f1 = Vec::new();
                if main + p.reserve > u {
                    f0.push(Fix::Boot);
                    main = p.bootstrap_out;
                }
                if skip + p.reserve > u {
                    f1.push(Fix::Boot);
                    skip = p.bootstrap_out;
                }
                if skip > main && p.mismatch_policy == MismatchPolicy::BootstrapOnMismatch && f1.is_empty() {
                    f1.push(Fix::Boot);
                    skip = p.bootstrap_out;
                }
                if skip < main {
                    f1.push(Fix::Rescale(main - skip));
                }
                if main < skip {
                    f0.push(Fix::Rescale(skip - main));
                }
                let n_boots = f0.iter().chain(&f1).filter(|f| **f == Fix::Boot).count();
                o.ciphertexts += n_boots * cts(id);
                o.fixes.insert((id, 0), f0);
                o.fixes.insert((id, 1), f1);
                main.max(skip)
            }
            ref k => {
                let need = cost(k);
                let mut l = lv[0];
                if need > 0 && l + need > u {
                    if o.refreshed.insert(ins[0]) {
                        o.ciphertexts += cts(ins[0]);
                    }
                    o.readers.insert(id);
                    l = p.bootstrap_out;
                }
                l + need
            }
        };
        o.level.insert(id, out);
        out
    }
    for n in g.nodes() {
        visit(n.id, g, p, u, &cost, &cts, &mut o);
    }
    o
}

pub fn random_dag(seed: u64) -> (NetworkGraph, HeProfile) {
    let mut rng = seeded_rng(seed);
    let u = rng.random_range(4..=9);
    let bout = rng.random_range(0..=1);
    let profile = HeProfile {
        usable_mults: u,
        bootstrap_out: bout,
        reserve: rng.random_range(0..=2),
        fold_batchnorm: rng.random_bool(0.5),
        mismatch_policy: if rng.random_bool(0.5) {
            MismatchPolicy::BootstrapOnMismatch
        } else {
            MismatchPolicy::RescaleDown
        },
        slots: [8, 16, 32][rng.random_range(0..3)],
        ..HeProfile::default()
    };
    let max_degree = (1usize << (u - bout)) - 1;
    let n = rng.random_range(3..=12);
    let mut b = GraphBuilder::new();
    let mut ids = vec![b.input(&[2, 3, 3])];
    while ids.len() < n - 1 {
        let pick = ids[rng.random_range(0..ids.len())];
        let kind = match rng.random_range(0..7) {
            0 => conv1x1(2),
            1 => NodeKind::BatchNorm,
            2 => NodeKind::MeanPool { window: 1 },
            3 => NodeKind::Activation(poly(rng.random_range(1..=max_degree.min(20)))),
            4 => NodeKind::Scale([0.0, 0.5, 1.0][rng.random_range(0..3)]),
            _ => {
                let other = ids[rng.random_range(0..ids.len())];
                ids.push(b.add(NodeKind::Add, &[pick, other]).unwrap());
                continue;
            }
        };
        ids.push(b.add(kind, &[pick]).unwrap());
    }
    b.add(NodeKind::Output, &[*ids.last().unwrap()]).unwrap();
    (b.finish().unwrap(), profile)
}

/// Maintenance nodes between `(to, port)` and its original producer,
/// producer side first.
pub fn chain_into(a: &Analysis, to: usize, port: usize) -> Vec<Fix> {
    let mut out = Vec::new();
    let mut p = a.graph.inputs_of(to)[port];
    loop {
        match a.graph.node(p).unwrap().kind {
            NodeKind::Bootstrap => out.push(Fix::Boot),
            NodeKind::Rescale { levels } => out.push(Fix::Rescale(levels)),
            _ => break,
        }
        p = a.graph.inputs_of(p)[0];
    }
    out.reverse();
    out
}
