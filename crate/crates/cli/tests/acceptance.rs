//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any failed.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use polyckt::hecost::{self, depth_of_poly, with_degree, HeProfile};
use polyckt::hesim::{self, static_bootstrap_events};
use polyckt::netgraph::*;
use polyckt::numcore::ops::{ConvGeometry, QNorm};
use polyckt::numcore::{seeded_rng, Tensor};
use polyckt::polyapprox::{remez, ActivationFn, Interval, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use polyckt::scopt::removal_schedule;
use polyckt::trainer::{estimate_ranges, polyfy_chained, synthetic, Model, SyntheticSpec};
use rand::Rng;

#[path = "../../core/tests/support/cidx_oracle.rs"]
mod cidx_oracle;
#[path = "../../core/tests/support/fd.rs"]
mod fd;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn polyckt(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_polyckt"))
        .args(args)
        .env_remove("POLYCKT_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "polyckt {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn minimax_exactness() -> Outcome {
    let unit = Interval::new(-1.0, 1.0).unwrap();
    let r1 = remez(&relu, 1, unit, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
    ensure((r1.max_abs_error - 0.25).abs() <= 1e-8, || format!("degree 1 error {}", r1.max_abs_error))?;
    let xs: Vec<f64> = r1.extrema.iter().map(|e| e.0).collect();
    ensure(
        xs.len() == 3 && xs.iter().zip([-1.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-8),
        || format!("degree 1 reference points {xs:?}"),
    )?;
    ensure(r1.equioscillates(1e-8), || format!("degree 1 extrema {:?}", r1.extrema))?;
    let r2 = remez(&relu, 2, unit, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
    ensure((r2.max_abs_error - 0.0625).abs() <= 1e-8, || format!("degree 2 error {}", r2.max_abs_error))?;
    Ok(format!("errors {} and {}", r1.max_abs_error, r2.max_abs_error))
}

fn nested_ranges() -> Outcome {
    let mut rng = seeded_rng(2);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..200 {
        let degree = rng.random_range(2..=8);
        let f = if k % 2 == 0 { ActivationFn::Relu } else { ActivationFn::Gelu };
        let a1 = rng.random_range(-10.0..0.0);
        let w1 = rng.random_range(1.0..15.0);
        let w2 = w1 * rng.random_range(0.05..1.0);
        let a2 = a1 + (w1 - w2) * rng.random_range(0.0..1.0);
        let outer = Interval::new(a1, a1 + w1).unwrap();
        let inner = Interval::new(a2, (a2 + w2).min(outer.hi)).unwrap();
        let target = |x: f64| f.eval(x);
        let eo = remez(&target, degree, outer, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
        let ei = remez(&target, degree, inner, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
        worst = worst.max(ei.max_abs_error - eo.max_abs_error);
        ensure(ei.max_abs_error <= eo.max_abs_error + 1e-9, || {
            format!("{f} degree {degree}: inner {inner} {} > outer {outer} {}", ei.max_abs_error, eo.max_abs_error)
        })?;
    }
    Ok(format!("200 pairs, largest inner-minus-outer {worst:.3e}"))
}

fn gelu_beats_relu() -> Outcome {
    let r = Interval::new(-5.0, 5.0).unwrap();
    let mut parts = vec![];
    for d in [2, 4, 6, 8] {
        let g = remez(&|x| ActivationFn::Gelu.eval(x), d, r, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
        let l = remez(&relu, d, r, DEFAULT_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
        ensure(g.max_abs_error < l.max_abs_error, || {
            format!("degree {d}: gelu {} relu {}", g.max_abs_error, l.max_abs_error)
        })?;
        parts.push(format!("d{d} {:.3}<{:.3}", g.max_abs_error, l.max_abs_error));
    }
    Ok(parts.join(", "))
}

fn cidx_oracle_equivalence() -> Outcome {
    use cidx_oracle::{chain_into, oracle, random_dag};
    let mut boots = 0;
    for seed in 0..500 {
        let (g, p) = random_dag(seed);
        let want = oracle(&g, &p);
        let a = hecost::analyze(&g, &p).map_err(|e| format!("seed {seed}: {e}"))?;
        for n in g.nodes() {
            ensure(a.cidx[&n.id] == want.level[&n.id], || format!("seed {seed} node {} cidx", n.id))?;
            if n.kind == NodeKind::Add {
                for port in 0..2 {
                    ensure(chain_into(&a, n.id, port) == want.fixes[&(n.id, port)], || {
                        format!("seed {seed} add {} port {port}", n.id)
                    })?;
                }
            } else if n.kind != NodeKind::Input {
                let reads_boot = a.graph.node(a.graph.inputs_of(n.id)[0]).unwrap().kind == NodeKind::Bootstrap;
                ensure(reads_boot == want.readers.contains(&n.id), || format!("seed {seed} node {} bootstrap", n.id))?;
            }
        }
        ensure(a.count_bootstraps() == want.ciphertexts, || format!("seed {seed} count"))?;
        boots += want.ciphertexts;
    }
    ensure(boots > 100, || format!("only {boots} bootstraps across all graphs"))?;
    Ok(format!("500 DAGs, {boots} bootstrapped ciphertexts"))
}

fn depth_calibration() -> Outcome {
    let (d2, d8, d16, d18) = (depth_of_poly(2), depth_of_poly(8), depth_of_poly(16), depth_of_poly(18));
    ensure(d16 == d18 && d2 < d8, || format!("depths {d2} {d8} {d16} {d18}"))?;
    Ok(format!("depths d2={d2} d8={d8} d16={d16} d18={d18}"))
}

fn skip_trend() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let toy = dir.path().join("toy");
    polyckt(&["build", "--blocks", "3", "--channels", "16", "--out", s(&toy)])?;
    let runs = dir.path().join("runs");
    let graph = toy.join("graph.json");
    for d in ["2", "8", "16", "18"] {
        for (tag, extra) in [("with", None), ("without", Some("--no-skips"))] {
            let out = runs.join(format!("d{d}-{tag}"));
            let mut args = vec!["analyze", "--graph", s(&graph), "--degree", d, "--label", "toy", "--out", s(&out)];
            args.extend(extra);
            polyckt(&args)?;
        }
    }
    let csv = polyckt(&["report", "--runs", s(&runs)])?;
    let mut ratio = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let with: usize = f[2].parse().map_err(|_| line.to_string())?;
        let without: usize = f[3].parse().map_err(|_| line.to_string())?;
        ensure(without <= with, || format!("removing skips added bootstraps: {line}"))?;
        ratio.insert(f[1].parse::<usize>().map_err(|_| line.to_string())?, f[4].parse::<f64>().map_err(|_| line.to_string())?);
    }
    let (r2, r8, r16, r18) = (ratio[&2], ratio[&8], ratio[&16], ratio[&18]);
    ensure(r2 > r8 && r8 >= r16 && r16 == r18, || format!("ratios {r2} {r8} {r16} {r18}"))?;

    let p = HeProfile::default();
    for blocks in 1..=6 {
        for d in [2, 4, 8, 16, 18] {
            let g = with_degree(&build_toy_resnet(blocks, 16).unwrap(), d);
            let w = hecost::count_bootstraps(&g, &p).map_err(|e| e.to_string())?;
            let wo = hecost::count_bootstraps(&g.without_skips(), &p).map_err(|e| e.to_string())?;
            ensure(wo <= w, || format!("blocks {blocks} degree {d}: {wo} > {w}"))?;
        }
    }
    Ok(format!("ratios d2={r2:.3} d8={r8:.3} d16={r16:.3} d18={r18:.3}"))
}

fn removal_exactness() -> Outcome {
    for n in 1..=10usize {
        let sched = removal_schedule(n).map_err(|e| e.to_string())?;
        for e in 1..=n {
            ensure(sched.at(e) == 1.0 - e as f64 / n as f64, || format!("N={n} E={e}: {}", sched.at(e)))?;
        }
    }
    let g = ResNetSpec {
        blocks: 2,
        channels: 4,
        image: 8,
        ..ResNetSpec::default()
    }
    .build()
    .unwrap();
    let w = init_weights(&g, &mut seeded_rng(7));
    let mut rng = seeded_rng(8);
    let x = Tensor::new(vec![2, 3, 8, 8], (0..384).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let a = evaluate(&g, &w, &x).map_err(|e| e.to_string())?;
    let b = evaluate(&g.apply_skip_scale(1.0).map_err(|e| e.to_string())?, &w, &x).map_err(|e| e.to_string())?;
    let gap = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    ensure(gap <= 1e-12, || format!("a=1 changed outputs by {gap}"))?;
    Ok(format!("N=1..10 exact, a=1 output gap {gap:e}"))
}

fn gradient_integrity() -> Outcome {
    use fd::{fd_check, random};
    let mut rng = seeded_rng(8);
    let mut worst: f64 = 0.0;
    let mut worst_rl: f64 = 0.0;
    for trial in 0..100 {
        let a = random(&[3, 4], &mut rng, -1.0, 1.0);
        let b = random(&[4, 2], &mut rng, -1.0, 1.0);
        worst = worst.max(fd_check(&[a, b], &mut rng, 1e-5, &|t, v| t.matmul(v[0], v[1]).unwrap()));
        let x = random(&[2, 5], &mut rng, -1.0, 1.0);
        let w = random(&[3, 5], &mut rng, -1.0, 1.0);
        let bias = random(&[3], &mut rng, -1.0, 1.0);
        worst = worst.max(fd_check(&[x, w, bias], &mut rng, 1e-5, &|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap()));
        let p = random(&[6], &mut rng, -1.0, 1.0);
        let q = random(&[6], &mut rng, -1.0, 1.0);
        let c: f64 = rng.random_range(-2.0..2.0);
        worst = worst.max(fd_check(&[p, q], &mut rng, 1e-5, &|t, v| {
            let m = t.mul(v[0], v[1]).unwrap();
            let s = t.add(m, v[0]).unwrap();
            t.scale(s, c).unwrap()
        }));

        let geo = ConvGeometry {
            stride: rng.random_range(1..=2),
            pad: rng.random_range(0..=1),
            groups: [1, 2][trial % 2],
        };
        let x = random(&[2, 2, 5, 5], &mut rng, -1.0, 1.0);
        let w = random(&[2, 2 / geo.groups, 3, 3], &mut rng, -1.0, 1.0);
        let b = random(&[2], &mut rng, -1.0, 1.0);
        worst = worst.max(fd_check(&[x, w, b], &mut rng, 1e-5, &|t, v| t.conv2d(v[0], v[1], Some(v[2]), geo).unwrap()));

        let x = random(&[2, 2, 4, 4], &mut rng, -1.0, 1.0);
        worst = worst.max(fd_check(&[x.clone()], &mut rng, 1e-5, &|t, v| t.mean_pool2d(v[0], 2, 2).unwrap()));
        let gamma = random(&[2], &mut rng, 0.5, 1.5);
        let beta = random(&[2], &mut rng, -0.5, 0.5);
        worst = worst.max(fd_check(&[x.clone(), gamma.clone(), beta.clone()], &mut rng, 1e-5, &|t, v| {
            t.batch_norm_train(v[0], v[1], v[2]).unwrap().0
        }));
        worst = worst.max(fd_check(&[x, gamma, beta], &mut rng, 1e-5, &|t, v| {
            t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2], &[0.5, 2.0]).unwrap()
        }));

        // keep away from the ReLU kink
        let x = random(&[8], &mut rng, -2.0, 2.0).map(|v| if v.abs() < 0.01 { v + 0.1f64.copysign(v) } else { v });
        worst = worst.max(fd_check(&[x.clone()], &mut rng, 1e-5, &|t, v| t.relu(v[0]).unwrap()));
        worst = worst.max(fd_check(&[x.clone()], &mut rng, 1e-5, &|t, v| t.gelu(v[0]).unwrap()));
        let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(fd_check(&[x], &mut rng, 1e-5, &|t, v| t.poly(v[0], &coeffs).unwrap()));

        let logits = random(&[3, 4], &mut rng, -2.0, 2.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
        worst = worst.max(fd_check(&[logits], &mut rng, 1e-5, &|t, v| t.cross_entropy(v[0], &labels).unwrap()));

        let qn = [QNorm::L1, QNorm::L2, QNorm::Inf][trial % 3];
        let a = random(&[2, 5], &mut rng, -3.0, 3.0);
        let b = random(&[2, 2, 2], &mut rng, -3.0, 3.0);
        worst_rl = worst_rl.max(fd_check(&[a, b], &mut rng, 1e-4, &|t, v| t.range_loss(v, qn).unwrap()));
    }
    Ok(format!("100 trials, worst rel err {worst:.2e} (layers) {worst_rl:.2e} (range loss)"))
}

const DESK_CONFIG: &str = r#"{
  "seed": 0,
  "synthetic": { "noise": 0.8 },
  "model": { "arch": "resnet", "blocks": 3, "channels": 8 },
  "train": {
    "degree": 18,
    "pretrain_epochs": 5,
    "range_epochs": 5,
    "finetune_epochs": 3,
    "lr": 0.02,
    "w_pre": 0.05,
    "w_post": 0.05
  }
}
"#;

fn desk_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("desk.json");
    std::fs::write(&cfg, DESK_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.path().join("model");
    polyckt(&["train", "--config", s(&cfg), "--data", "synthetic", "--out", s(&out)])?;
    let text = std::fs::read_to_string(out.join("summary.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let num = |p: &str| v.pointer(p).and_then(|x| x.as_f64()).ok_or_else(|| format!("summary lacks {p}"));
    let (env0, env1) = (num("/envelope/before")?, num("/envelope/after")?);
    let (before, tuned, fin) = (num("/accuracy/before")?, num("/accuracy/range_tuned")?, num("/accuracy/final")?);
    let shrink = 1.0 - env1 / env0;
    ensure(shrink >= 0.5, || format!("envelope {env0} -> {env1} shrank {:.1}%", 100.0 * shrink))?;
    for (name, reference) in [("original", before), ("range-tuned", tuned)] {
        ensure((fin - reference).abs() <= 0.02, || {
            format!("final accuracy {fin} vs {name} {reference}")
        })?;
    }
    Ok(format!(
        "envelope {env0:.2} -> {env1:.2} (-{:.0}%), accuracy {before:.4} / {tuned:.4} -> {fin:.4}",
        100.0 * shrink
    ))
}

/// Untrained 3-block toy ResNet polyfied at degree 18 on ranges from
/// synthetic data, plus those inputs.
fn polyfied_toy() -> Result<(Model, Tensor), String> {
    let g = ResNetSpec {
        blocks: 3,
        channels: 8,
        image: 8,
        classes: 4,
        ..ResNetSpec::default()
    }
    .build()
    .map_err(|e| e.to_string())?;
    let m = Model::init(g, 0).map_err(|e| e.to_string())?;
    let data = synthetic(SyntheticSpec {
        samples: 32,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let ranges: Vec<_> = estimate_ranges(&m, &data, 1.0, &[])
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.with_margin(0.1 * (r.hi - r.lo)))
        .collect();
    let (p, _) = polyfy_chained(&m, &ranges, 18, polyckt::polyapprox::FitMethod::Remez).map_err(|e| e.to_string())?;
    Ok((p, data.images))
}

fn mock_he_fidelity() -> Outcome {
    let (m, x) = polyfied_toy()?;
    let p = HeProfile::default();
    let r = hesim::simulate(&m.graph, &m.weights, &x, &p, None).map_err(|e| e.to_string())?;
    ensure(r.trace.mse <= 1e-10, || format!("MSE {} at 42 bits", r.trace.mse))?;
    // Below the f64 rounding floor of the reference evaluation, MSE is
    // rounding noise: a length-K dot product over values up to P carries
    // error up to about K * eps * P.
    let mut peak: f64 = 0.0;
    evaluate_nodes(&m.graph, &m.weights, &x, &mut |_, t| {
        peak = t.data().iter().fold(peak, |a, v| a.max(v.abs()));
        Ok(t)
    })
    .map_err(|e| e.to_string())?;
    let fan_in = m
        .weights
        .iter()
        .filter(|(k, _)| k.ends_with(".weight"))
        .map(|(_, w)| w.len() / w.dims()[0])
        .max()
        .unwrap_or(1);
    let floor = (fan_in as f64 * f64::EPSILON * peak).powi(2);
    let bits: Vec<u32> = (8..=52).step_by(2).collect();
    let sweep = hesim::mse_sweep(&m.graph, &m.weights, &x, &p, &bits).map_err(|e| e.to_string())?;
    ensure(sweep.windows(2).all(|w| w[1].1 <= w[0].1 || w[1].1.max(w[0].1) <= floor), || {
        format!("MSE not monotone above rounding floor {floor:.2e}: {sweep:?}")
    })?;
    let resolved = sweep.iter().filter(|s| s.1 > floor).count();
    let a = hecost::analyze(&m.graph, &p).map_err(|e| e.to_string())?;
    ensure(r.trace.events == static_bootstrap_events(&a), || "bootstrap events differ from static insertion".into())?;
    ensure(!r.trace.events.is_empty(), || "no bootstraps exercised".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let md = dir.path().join("model");
    std::fs::create_dir_all(&md).map_err(|e| e.to_string())?;
    save_graph(&m.graph, &md.join("graph.json")).map_err(|e| e.to_string())?;
    save_weights(&m.weights, &md.join("weights.pckt")).map_err(|e| e.to_string())?;
    let sim: serde_json::Value =
        serde_json::from_str(polyckt(&["simulate", "--model", s(&md), "--synthetic", "8"])?.trim()).map_err(|e| e.to_string())?;
    let an: serde_json::Value =
        serde_json::from_str(&polyckt(&["analyze", "--model", s(&md)])?).map_err(|e| e.to_string())?;
    ensure(sim["bootstraps"] == an["bootstraps"], || format!("simulate {} vs analyze {}", sim["bootstraps"], an["bootstraps"]))?;
    Ok(format!(
        "MSE {:.2e} at 42 bits, monotone over 8..=52 bits ({resolved} points above rounding floor {floor:.1e}), {} bootstraps match static insertion",
        r.trace.mse, r.trace.bootstraps
    ))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("manifest.json") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files_under(a), files_under(b));
    ensure(fa == fb, || format!("{} and {} hold different files", a.display(), b.display()))?;
    for f in &fa {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        ensure(x == y, || format!("{} differs after rerun", f.display()))?;
    }
    Ok(fa.len())
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let (poly, _) = polyfied_toy()?;
    let graphs = [
        build_toy_resnet(3, 16).unwrap(),
        build_toy_convnext(3, 16).unwrap(),
        build_toy_resnet(2, 4).unwrap().apply_skip_scale(0.25).unwrap(),
        poly.graph.clone(),
    ];
    for (k, g) in graphs.iter().enumerate() {
        let (p1, p2) = (root.join(format!("g{k}a.json")), root.join(format!("g{k}b.json")));
        save_graph(g, &p1).map_err(|e| e.to_string())?;
        let back = load_graph(&p1).map_err(|e| e.to_string())?;
        save_graph(&back, &p2).map_err(|e| e.to_string())?;
        ensure(std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(), || format!("graph {k} JSON changed"))?;
        let w = init_weights(g, &mut seeded_rng(k as u64));
        let bytes = weights_to_bytes(&w);
        let again = weights_to_bytes(&weights_from_bytes(&bytes).map_err(|e| e.to_string())?);
        ensure(bytes == again, || format!("graph {k} weights changed"))?;
    }
    let bytes = weights_to_bytes(&poly.weights);
    ensure(weights_to_bytes(&weights_from_bytes(&bytes).unwrap()) == bytes, || "polyfied weights changed".into())?;

    // CLI reruns
    let cfg = root.join("small.json");
    std::fs::write(
        &cfg,
        r#"{"synthetic": {"samples": 160}, "model": {"blocks": 1, "channels": 4},
            "train": {"pretrain_epochs": 1, "range_epochs": 1, "finetune_epochs": 1, "degree": 6}}"#,
    )
    .unwrap();
    let r = |p: &str| root.join(p);
    let runs: Vec<(Vec<String>, PathBuf)> = vec![
        (vec!["approx", "--fn", "gelu", "--degree", "2,6", "--range-sweep", "-1,1..-4,4,3", "--out", s(&r("approx.csv"))], r("approx.csv")),
        (vec!["build", "--blocks", "2", "--channels", "4", "--image", "8", "--classes", "4", "--out", s(&r("build"))], r("build")),
        (vec!["train", "--config", s(&cfg), "--data", "synthetic", "--out", s(&r("train"))], r("train")),
        (vec!["polyfy", "--config", s(&cfg), "--model", s(&r("build")), "--data", "synthetic", "--degree", "8", "--out", s(&r("polyfy"))], r("polyfy")),
        (vec!["analyze", "--model", s(&r("build")), "--degree", "8", "--out", s(&r("analyze"))], r("analyze")),
        (vec!["place-skips", "--model", s(&r("build")), "--degree", "8", "--strip", "--out", s(&r("place"))], r("place")),
        (vec!["remove-skips", "--n", "4", "--graph", s(&r("build/graph.json")), "--epoch", "2", "--out", s(&r("remove"))], r("remove")),
        (vec!["simulate", "--model", s(&r("polyfy")), "--synthetic", "6", "--noise-sigma", "1e-9", "--out", s(&r("simulate"))], r("simulate")),
    ]
    .into_iter()
    .map(|(a, o)| (a.into_iter().map(String::from).collect(), o))
    .collect();
    let mut files = 0;
    for (args, out) in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        polyckt(&args)?;
        let (manifest, copy) = if out.is_dir() {
            (out.join("manifest.json"), PathBuf::from(format!("{}-rerun", out.display())))
        } else {
            (PathBuf::from(format!("{}.manifest.json", out.display())), r("approx-rerun.csv"))
        };
        polyckt(&["rerun", "--manifest", s(&manifest), "--out", s(&copy)])?;
        if out.is_dir() {
            files += same_tree(out, &copy)?;
        } else {
            ensure(std::fs::read(out).unwrap() == std::fs::read(&copy).unwrap(), || "approx CSV differs after rerun".into())?;
            files += 1;
        }
    }
    Ok(format!("graph/PCKT round-trips identical; {} commands rerun, {files} files identical", runs.len()))
}

fn convnext_vs_resnet() -> Outcome {
    let p = HeProfile::default();
    for blocks in 1..=6 {
        let (r, c) = (build_toy_resnet(blocks, 16).unwrap(), build_toy_convnext(blocks, 16).unwrap());
        let (ra, ca) = (r.activation_ids().len(), c.activation_ids().len());
        ensure(ra == 3 * ca, || format!("{blocks} blocks: {ra} vs {ca} activations"))?;
    }
    let mut pairs = vec![];
    for blocks in 2..=6 {
        for d in [2, 8, 16, 18] {
            let r = hecost::count_bootstraps(&with_degree(&build_toy_resnet(blocks, 16).unwrap(), d), &p).map_err(|e| e.to_string())?;
            let c = hecost::count_bootstraps(&with_degree(&build_toy_convnext(blocks, 16).unwrap(), d), &p).map_err(|e| e.to_string())?;
            ensure(c < r, || format!("{blocks} blocks degree {d}: convnext {c} vs resnet {r}"))?;
            if blocks == 3 {
                pairs.push(format!("d{d} {c}<{r}"));
            }
        }
    }
    Ok(format!("3:1 activations; 3 blocks: {}", pairs.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("minimax exactness", minimax_exactness),
        ("nested ranges never increase error", nested_ranges),
        ("GELU approximates better than ReLU", gelu_beats_relu),
        ("chain-index oracle equivalence", cidx_oracle_equivalence),
        ("depth calibration", depth_calibration),
        ("skip-elimination trend", skip_trend),
        ("removal schedule exactness", removal_exactness),
        ("gradient integrity", gradient_integrity),
        ("desk-scale range-aware training", desk_pipeline),
        ("mock-HE fidelity", mock_he_fidelity),
        ("round-trips and reruns", round_trips),
        ("ConvNeXt vs ResNet", convnext_vs_resnet),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|m| m.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
