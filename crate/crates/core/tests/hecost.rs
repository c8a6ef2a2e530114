use std::collections::BTreeSet;

use polyckt::hecost::*;
use polyckt::netgraph::*;
use polyckt::polyapprox::{Interval, Polynomial};
use proptest::prelude::*;

#[path = "support/cidx_oracle.rs"]
mod cidx_oracle;
use cidx_oracle::{chain_into, oracle, random_dag};

fn poly(degree: usize) -> ActivationSpec {
    let mut c = vec![0.0; degree + 1];
    c[degree] = 1.0;
    ActivationSpec::Poly(Polynomial::new(c, Interval::new(-1.0, 1.0).unwrap()).unwrap())
}

fn conv1x1(c: usize) -> NodeKind {
    NodeKind::Conv(ConvSpec::same(c, 1))
}

/// Input [2,4,4] followed by `n` 1x1 convs and an Output.
fn conv_chain(n: usize) -> NetworkGraph {
    let mut b = GraphBuilder::new();
    let mut x = b.input(&[2, 4, 4]);
    for _ in 0..n {
        x = b.add(conv1x1(2), &[x]).unwrap();
    }
    b.add(NodeKind::Output, &[x]).unwrap();
    b.finish().unwrap()
}

/// Smallest depth at which every `c * x^i`, `i <= d`, is computable when
/// products of two depth-k values land at depth k+1 and multiplying by a
/// constant costs one level.
fn power_tree_depth(d: usize) -> usize {
    let mut powers: BTreeSet<usize> = [1].into();
    let mut scaled: BTreeSet<usize> = [0].into();
    let mut k = 0;
    while !(0..=d).all(|i| scaled.contains(&i)) {
        let mut np = powers.clone();
        let mut ns = scaled.clone();
        for &a in &powers {
            ns.insert(a);
            for &b in &powers {
                np.insert(a + b);
            }
            for &s in &scaled {
                ns.insert(a + s);
            }
        }
        powers = np;
        scaled = ns;
        k += 1;
    }
    k
}

#[test]
fn poly_depth_matches_power_tree_enumeration() {
    for d in 1..=40 {
        assert_eq!(depth_of_poly(d), power_tree_depth(d), "degree {d}");
    }
    assert_eq!(depth_of_poly(0), 0);
    assert_eq!(depth_of_poly(2), 2);
    assert_eq!(depth_of_poly(16), 5);
    assert_eq!(depth_of_poly(18), 5);
    assert!(depth_of_poly(2) < depth_of_poly(8));
}

#[test]
fn three_convs_need_no_bootstrap() {
    let a = analyze(&conv_chain(3), &HeProfile::default()).unwrap();
    let out = a.graph.output_id().unwrap();
    assert_eq!(a.cidx[&out], 3);
    assert_eq!(a.count_bootstraps(), 0);
    assert_eq!(a.mult_depth(), 3);
}

#[test]
fn ten_levels_need_one_bootstrap() {
    let a = analyze(&conv_chain(10), &HeProfile::default()).unwrap();
    assert_eq!(a.bootstrap_nodes().len(), 1);
    assert_eq!(a.count_bootstraps(), 1);
    let out = a.graph.output_id().unwrap();
    assert_eq!(a.cidx[&out], 1);
}

#[test]
fn single_conv_depth_is_one() {
    assert_eq!(mult_depth(&conv_chain(1), &HeProfile::default()).unwrap(), 1);
}

#[test]
fn lower_skip_is_rescaled() {
    // skip from CIdx 2 into a main branch at CIdx 3
    let g = conv_chain(3).with_skip(SkipEdge { i: 2, j: 3, a: 1.0 }).unwrap().0;
    let a = analyze(&g, &HeProfile::default()).unwrap();
    let add = a.base.skip_adds()[0];
    let ins = a.graph.inputs_of(add);
    assert_eq!(a.graph.node(ins[1]).unwrap().kind, NodeKind::Rescale { levels: 1 });
    assert_eq!(a.cidx[&add], 3);
    assert_eq!(a.count_bootstraps(), 0);
    assert_eq!(a.mult_depth(), 3);
}

/// Five convs (CIdx 5), then two degree-7 activations; the second needs a
/// bootstrap, leaving the main branch at 3 against a skip at 5.
fn mismatched() -> (NetworkGraph, NetworkGraph) {
    let mut b = GraphBuilder::new();
    let mut x = b.input(&[2, 4, 4]);
    for _ in 0..5 {
        x = b.add(conv1x1(2), &[x]).unwrap();
    }
    let a1 = b.add(NodeKind::Activation(poly(7)), &[x]).unwrap();
    let a2 = b.add(NodeKind::Activation(poly(7)), &[a1]).unwrap();
    b.add(NodeKind::Output, &[a2]).unwrap();
    let g = b.finish().unwrap();
    let with = g.with_skip(SkipEdge { i: 5, j: 7, a: 1.0 }).unwrap().0;
    (g, with)
}

#[test]
fn mismatched_skip_costs_levels_under_rescale_policy() {
    let (plain, with) = mismatched();
    let base = HeProfile::default();
    let d0 = analyze(&plain, &base).unwrap().mult_depth();
    assert_eq!(d0, 11);
    let a = analyze(&with, &base).unwrap();
    let add = a.base.skip_adds()[0];
    let ins = a.base.inputs_of(add);
    assert_eq!((a.cidx[&ins[0]], a.cidx[&ins[1]]), (3, 5));
    assert_eq!(a.mult_depth(), d0, "bootstrap-on-mismatch leaves depth alone");
    assert_eq!(a.count_bootstraps(), 2);
    let rd = HeProfile {
        mismatch_policy: MismatchPolicy::RescaleDown,
        ..HeProfile::default()
    };
    let b = analyze(&with, &rd).unwrap();
    assert_eq!(b.mult_depth(), d0 + 2);
    assert_eq!(b.count_bootstraps(), 1);
}

fn vector_chain(len: usize, scales: usize) -> NetworkGraph {
    let mut b = GraphBuilder::new();
    let mut x = b.input(&[len]);
    for _ in 0..scales {
        x = b.add(NodeKind::Scale(0.5), &[x]).unwrap();
    }
    b.add(NodeKind::Output, &[x]).unwrap();
    b.finish().unwrap()
}

#[test]
fn bootstraps_count_ciphertexts() {
    let p = HeProfile::default();
    assert_eq!(count_bootstraps(&vector_chain(16384, 9), &p).unwrap(), 0);
    assert_eq!(count_bootstraps(&vector_chain(16384, 10), &p).unwrap(), 1);
    assert_eq!(count_bootstraps(&vector_chain(50000, 10), &p).unwrap(), 4);
}

#[test]
fn non_polynomial_graphs_are_rejected() {
    let g = build_toy_resnet(1, 4).unwrap();
    assert!(matches!(analyze(&g, &HeProfile::default()), Err(HeError::NotHeFriendly { .. })));
    let mut t = ConsumeTable::for_profile(&HeProfile::default());
    t.0.remove("Conv");
    let err = propagate_cidx(&conv_chain(1), &HeProfile::default(), &t).unwrap_err();
    assert!(matches!(err, HeError::MissingKind(_)));
}

#[test]
fn cost_matrix_cases() {
    let mut b = GraphBuilder::new();
    let x = b.input(&[2, 4, 4]);
    let bn = b.add(NodeKind::BatchNorm, &[x]).unwrap();
    let c = b.add(conv1x1(2), &[bn]).unwrap();
    let p = b.add(NodeKind::MeanPool { window: 2 }, &[c]).unwrap();
    b.add(NodeKind::Output, &[p]).unwrap();
    let g = b.finish().unwrap();
    let prof = HeProfile::default();
    let m = cost_matrix(&g, &prof).unwrap();
    assert_eq!(m.len(), 4);
    let k = prof.costs;
    assert_eq!(m.get(0, 1), k.add);
    assert_eq!(m.get(0, 2), k.add + k.rescale);
    assert_eq!(m.get(1, 2), k.add + k.rescale);
    assert!(m.get(0, 3).is_infinite(), "shape change");
    for i in 0..4 {
        for j in 0..=i {
            assert!(m.get(i, j).is_infinite());
        }
    }
    let csv = m.to_csv();
    assert!(csv.starts_with("i,j,cost\n0,1,"));
}

#[test]
fn layout_change_adds_surcharge() {
    let mut b = GraphBuilder::new();
    let x = b.input(&[2, 4, 4]);
    let bn = b.add(NodeKind::BatchNorm, &[x]).unwrap();
    b.set_layout(bn, 1);
    b.add(NodeKind::Output, &[bn]).unwrap();
    let m = cost_matrix(&b.finish().unwrap(), &HeProfile::default()).unwrap();
    let k = HeProfile::default().costs;
    assert!((m.get(0, 1) - (k.add + k.rotate)).abs() < 1e-15);
}

#[test]
fn single_conv_latency_is_all_conv() {
    let a = analyze(&conv_chain(1), &HeProfile::default()).unwrap();
    let l = latency_breakdown(&a).unwrap();
    assert_eq!(l.share(Category::Conv), 1.0);
}

#[test]
fn resnet_degree_18_is_dominated_by_activations_and_bootstraps() {
    let g = with_degree(&build_toy_resnet(3, 16).unwrap(), 18);
    let a = analyze(&g, &HeProfile::default()).unwrap();
    let l = latency_breakdown(&a).unwrap();
    let sum: f64 = l.categories.iter().map(|c| c.2).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!(l.share(Category::Activations) + l.share(Category::Bootstraps) > 0.5, "{l:?}");
    let csv = report_csv(&a).unwrap();
    assert!(csv.starts_with("node_id,kind,cidx,bootstraps_before,category_cost\n"));
    assert_eq!(csv.lines().count(), a.graph.nodes().len() + 1);
}

#[test]
fn resnet_skip_ratio_falls_with_degree() {
    let p = HeProfile::default();
    let ratio = |d: usize| {
        let g = with_degree(&build_toy_resnet(3, 16).unwrap(), d);
        let w = count_bootstraps(&g, &p).unwrap() as f64;
        let wo = count_bootstraps(&g.without_skips(), &p).unwrap() as f64;
        assert!(w >= wo);
        w / wo
    };
    let (r2, r8, r16, r18) = (ratio(2), ratio(8), ratio(16), ratio(18));
    assert!(r2 > r8 && r8 >= r16 && r16 == r18, "{r2} {r8} {r16} {r18}");
}

/// One block at degree 16 or more ties at two bootstraps each, so the
/// comparison starts at two blocks.
#[test]
fn convnext_needs_fewer_bootstraps() {
    let p = HeProfile::default();
    for blocks in 2..=6 {
        for d in [2, 8, 16, 18] {
            let r = count_bootstraps(&with_degree(&build_toy_resnet(blocks, 16).unwrap(), d), &p).unwrap();
            let c = count_bootstraps(&with_degree(&build_toy_convnext(blocks, 16).unwrap(), d), &p).unwrap();
            assert!(c < r, "blocks {blocks} degree {d}: convnext {c} vs resnet {r}");
        }
    }
}

#[test]
fn skip_costs_match_matrix_entries() {
    let g = with_degree(&build_toy_resnet(2, 4).unwrap(), 4);
    let p = HeProfile::default();
    let a = analyze(&g, &p).unwrap();
    for (skip, cost) in a.skip_costs() {
        let without: Vec<SkipEdge> = a.base.skips().into_iter().filter(|s| s.j < skip.j).collect();
        let prior = g.without_skips().with_skips(&without).unwrap();
        let m = cost_matrix(&prior, &p).unwrap();
        assert!((m.get(skip.i, skip.j) - cost).abs() < 1e-9, "{skip:?}");
    }
}

#[test]
fn propagation_matches_brute_force_oracle_on_random_dags() {
    let mut total_boots = 0;
    for seed in 0..500 {
        let (g, p) = random_dag(seed);
        let want = oracle(&g, &p);
        let a = analyze(&g, &p).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        for n in g.nodes() {
            assert_eq!(a.cidx[&n.id], want.level[&n.id], "seed {seed} node {}", n.id);
            if n.kind == NodeKind::Add {
                for port in 0..2 {
                    assert_eq!(chain_into(&a, n.id, port), want.fixes[&(n.id, port)], "seed {seed} add {}", n.id);
                }
            } else if n.kind != NodeKind::Input {
                let reads_boot = a.graph.node(a.graph.inputs_of(n.id)[0]).unwrap().kind == NodeKind::Bootstrap;
                assert_eq!(reads_boot, want.readers.contains(&n.id), "seed {seed} node {}", n.id);
            }
        }
        let refreshed: BTreeSet<usize> = a
            .bootstrap_nodes()
            .into_iter()
            .filter(|&b| a.graph.consumers_of(b).iter().all(|&(c, _)| g.node(c).is_some_and(|n| n.kind != NodeKind::Add)))
            .map(|b| a.graph.inputs_of(b)[0])
            .collect();
        assert_eq!(refreshed, want.refreshed, "seed {seed}");
        assert_eq!(a.count_bootstraps(), want.ciphertexts, "seed {seed}");
        total_boots += want.ciphertexts;
    }
    assert!(total_boots > 100, "random DAGs should exercise bootstrapping");
}

#[test]
fn consuming_inputs_stay_within_budget() {
    for seed in 0..200 {
        let (g, p) = random_dag(seed);
        let a = analyze(&g, &p).unwrap();
        let t = ConsumeTable::for_profile(&p);
        for n in a.graph.nodes() {
            let Ok(k) = t.levels(n.id, &n.kind) else { continue };
            if k > 0 {
                let src = a.graph.inputs_of(n.id)[0];
                assert!(a.cidx[&src] + k <= p.usable_mults, "seed {seed} node {}", n.id);
            }
            assert!(a.cidx[&n.id] <= p.usable_mults);
        }
        for add in a.graph.nodes().iter().filter(|n| n.kind == NodeKind::Add) {
            let ins = a.graph.inputs_of(add.id);
            assert_eq!(a.cidx[&ins[0]], a.cidx[&ins[1]], "seed {seed}: misaligned add");
        }
    }
}

#[test]
fn analysis_is_idempotent() {
    for seed in 0..100 {
        let (g, p) = random_dag(seed);
        let a = analyze(&g, &p).unwrap();
        let b = analyze(&a.graph, &p).unwrap();
        assert_eq!(a.cost_matrix(), b.cost_matrix());
        assert_eq!(a.count_bootstraps(), b.count_bootstraps());
        assert_eq!(a.graph, b.graph);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn removing_skips_never_adds_bootstraps(
        blocks in 1usize..=5,
        degree in 1usize..=20,
        convnext in any::<bool>(),
        mask in any::<u8>(),
        rescale_down in any::<bool>(),
    ) {
        let g = if convnext { build_toy_convnext(blocks, 8) } else { build_toy_resnet(blocks, 8) }.unwrap();
        let g = with_degree(&g, degree);
        let p = HeProfile {
            mismatch_policy: if rescale_down { MismatchPolicy::RescaleDown } else { MismatchPolicy::BootstrapOnMismatch },
            ..HeProfile::default()
        };
        let all = g.skips();
        let keep: Vec<SkipEdge> = all.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, s)| *s).collect();
        let backbone = g.without_skips();
        let mut current = backbone.with_skips(&keep).unwrap();
        let mut boots = count_bootstraps(&current, &p).unwrap();
        for s in keep.iter().rev() {
            let rest: Vec<SkipEdge> = current.skips().into_iter().filter(|x| x != s).collect();
            current = backbone.with_skips(&rest).unwrap();
            let b = count_bootstraps(&current, &p).unwrap();
            prop_assert!(b <= boots);
            boots = b;
        }
        prop_assert_eq!(boots, count_bootstraps(&backbone, &p).unwrap());
    }
}
