use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use polyckt::hecost::{self, HeProfile};
use polyckt::hesim::{self, NoiseSpec};
use polyckt::netgraph::{
    check_weights, load_graph, load_weights, save_graph, save_weights, weights_from_bytes, weights_to_bytes,
    ActivationSpec, ConvNextSpec, NetworkGraph, NodeKind, ResNetSpec, Weights,
};
use polyckt::polyapprox::{self, ActivationFn, FitMethod, Interval};
use polyckt::scopt::{self, PlacementLimits};
use polyckt::trainer::{
    estimate_ranges, evaluate_split, ingest_dataset, lipschitz_bound, polyfy_chained, synthetic, train_he_friendly,
    DataSource, Dataset, Model, SplitSpec, Splits, SyntheticSpec, TrainConfig, TrainError,
};

use crate::cli::*;
use crate::failure::{input, usage, Failure, Outcome};
use crate::manifest::{self, Record};

const SEED_VAR: &str = "POLYCKT_SEED";

/// Flag, then config file, then `POLYCKT_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Outcome<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

fn method(m: Method) -> FitMethod {
    match m {
        Method::Remez => FitMethod::Remez,
        Method::Lstsq => FitMethod::Lstsq,
    }
}

fn method_flag(m: FitMethod) -> Method {
    match m {
        FitMethod::Remez => Method::Remez,
        FitMethod::Lstsq => Method::Lstsq,
    }
}

fn activation(f: ActFn) -> ActivationFn {
    match f {
        ActFn::Relu => ActivationFn::Relu,
        ActFn::Gelu => ActivationFn::Gelu,
    }
}

fn at<T, E: Into<Failure>>(path: &Path, r: Result<T, E>) -> Outcome<T> {
    r.map_err(|e| match e.into() {
        Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        Failure::Numeric(m) => Failure::Numeric(format!("{}: {m}", path.display())),
    })
}

fn read_graph(path: &Path) -> Outcome<NetworkGraph> {
    at(path, load_graph(path))
}

fn read_weights(graph: &NetworkGraph, path: &Path) -> Outcome<Weights> {
    let w = at(path, load_weights(path))?;
    at(path, check_weights(graph, &w))?;
    Ok(w)
}

fn load_model(dir: &Path) -> Outcome<Model> {
    let graph = read_graph(&dir.join("graph.json"))?;
    let weights = read_weights(&graph, &dir.join("weights.pckt"))?;
    Ok(Model { graph, weights })
}

fn save_model(dir: &Path, model: &Model) -> Outcome<Vec<PathBuf>> {
    make_dir(dir)?;
    let (g, w) = (dir.join("graph.json"), dir.join("weights.pckt"));
    save_graph(&model.graph, &g)?;
    save_weights(&model.weights, &w)?;
    Ok(vec![g, w])
}

fn load_profile(path: Option<&Path>) -> Outcome<HeProfile> {
    match path {
        Some(p) => at(p, HeProfile::load(p)),
        None => Ok(HeProfile::default()),
    }
}

fn load_graph_args(a: &GraphArgs) -> Outcome<(NetworkGraph, PathBuf)> {
    let path = match (&a.graph, &a.model) {
        (Some(g), _) => g.clone(),
        (None, Some(m)) => m.join("graph.json"),
        (None, None) => return Err(usage("one of --graph or --model is required")),
    };
    let g = read_graph(&path)?;
    Ok((a.degree.map_or_else(|| g.clone(), |d| hecost::with_degree(&g, d)), path))
}

/// Highest polynomial degree among the activations, if all are polynomial.
fn poly_degree(g: &NetworkGraph) -> Option<usize> {
    let mut best = None;
    for id in g.activation_ids() {
        match &g.node(id)?.kind {
            NodeKind::Activation(ActivationSpec::Poly(p)) => best = best.max(Some(p.degree())),
            _ => return None,
        }
    }
    best
}

fn parse_f64(s: &str, what: &str) -> Outcome<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| usage(format!("{what}: {s:?} is not a number")))
}

fn parse_pair(s: &str, what: &str) -> Outcome<(f64, f64)> {
    match s.split(',').collect::<Vec<_>>()[..] {
        [a, b] => Ok((parse_f64(a, what)?, parse_f64(b, what)?)),
        _ => Err(usage(format!("{what}: expected A,B, got {s:?}"))),
    }
}

/// `A1,B1..A2,B2,STEPS` into `STEPS` linearly interpolated ranges.
fn parse_sweep(s: &str) -> Outcome<Vec<(f64, f64)>> {
    let bad = || usage(format!("--range-sweep: expected A1,B1..A2,B2,STEPS, got {s:?}"));
    let (first, rest) = s.split_once("..").ok_or_else(bad)?;
    let (a1, b1) = parse_pair(first, "--range-sweep")?;
    let parts: Vec<&str> = rest.split(',').collect();
    let [a2, b2, steps] = parts[..] else {
        return Err(bad());
    };
    let (a2, b2) = (parse_f64(a2, "--range-sweep")?, parse_f64(b2, "--range-sweep")?);
    let steps: usize = steps.trim().parse().map_err(|_| bad())?;
    if steps == 0 {
        return Err(usage("--range-sweep needs at least one step"));
    }
    if steps == 1 {
        return Ok(vec![(a1, b1)]);
    }
    Ok((0..steps)
        .map(|k| {
            let t = k as f64 / (steps - 1) as f64;
            (a1 + t * (a2 - a1), b1 + t * (b2 - b1))
        })
        .collect())
}

pub fn approx(a: &ApproxArgs) -> Outcome<Record> {
    let ranges = match (&a.range, &a.range_sweep) {
        (Some(r), _) => vec![parse_pair(r, "--range")?],
        (None, Some(s)) => parse_sweep(s)?,
        (None, None) => return Err(usage("one of --range or --range-sweep is required")),
    };
    let f = activation(a.function);
    let target = move |x: f64| f.eval(x);
    let mut csv = String::from("fn,method,a,b,degree,max_error,error_argmax,iterations\n");
    for &(lo, hi) in &ranges {
        let range = Interval::new(lo, hi)?;
        for &d in &a.degree {
            let r = polyapprox::fit(method(a.method), &target, d, range)?.require_converged()?;
            let _ = writeln!(
                csv,
                "{},{},{lo},{hi},{d},{},{},{}",
                f.name(),
                method(a.method),
                r.max_abs_error,
                r.error_argmax,
                r.iterations
            );
        }
    }
    let config = json!({
        "fn": a.function,
        "method": a.method,
        "degree": a.degree,
        "ranges": ranges,
    });
    match &a.out {
        Some(out) => {
            write(out, &csv)?;
            Ok(Record {
                config,
                outputs: vec![out.clone()],
                manifest: Some(manifest::beside(out)),
                ..Record::default()
            })
        }
        None => {
            print!("{csv}");
            Ok(Record { config, ..Record::default() })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub blocks: usize,
    pub channels: usize,
    pub activations_per_block: usize,
    pub expansion: usize,
    pub activation: ActFn,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Arch::Resnet,
            blocks: 3,
            channels: 16,
            activations_per_block: 3,
            expansion: 1,
            activation: ActFn::Relu,
        }
    }
}

impl ModelSpec {
    fn build(&self, in_channels: usize, image: usize, classes: usize) -> Outcome<NetworkGraph> {
        let g = match self.arch {
            Arch::Resnet => ResNetSpec {
                blocks: self.blocks,
                channels: self.channels,
                activations_per_block: self.activations_per_block,
                in_channels,
                image,
                classes,
                activation: match self.activation {
                    ActFn::Relu => ActivationSpec::Relu,
                    ActFn::Gelu => ActivationSpec::Gelu,
                },
            }
            .build(),
            Arch::Convnext => ConvNextSpec {
                blocks: self.blocks,
                channels: self.channels,
                expansion: self.expansion,
                in_channels,
                image,
                classes,
            }
            .build(),
        };
        g.map_err(|e| usage(e.to_string()))
    }
}

/// Contents of `--config` files for `train` and `polyfy`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    /// Seeds data generation, splitting, initialisation and training.
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub synthetic: SyntheticSpec,
    pub model: ModelSpec,
}

fn load_run_file(path: Option<&Path>) -> Outcome<RunFile> {
    let Some(path) = path else {
        return Ok(RunFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn files_in(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn idx_source(dir: &Path) -> Outcome<Option<DataSource>> {
    let files = files_in(dir)?;
    // training files win over test files
    let pick = |kind: &str| {
        let mut hits: Vec<&PathBuf> = files.iter().filter(|p| file_name(p).contains(kind)).collect();
        hits.sort_by_key(|p| (!file_name(p).starts_with("train"), (*p).clone()));
        hits.first().map(|p| (*p).clone())
    };
    Ok(match (pick("images-idx3"), pick("labels-idx1")) {
        (Some(images), Some(labels)) => Some(DataSource::Idx { images, labels }),
        _ => None,
    })
}

fn cifar_source(dir: &Path) -> Outcome<Option<DataSource>> {
    let files = files_in(dir)?;
    let train: Vec<PathBuf> = files
        .iter()
        .filter(|p| file_name(p).starts_with("data_batch"))
        .cloned()
        .collect();
    if !train.is_empty() {
        return Ok(Some(DataSource::Cifar(train)));
    }
    Ok(files
        .iter()
        .find(|p| file_name(p) == "test_batch.bin")
        .map(|p| DataSource::Cifar(vec![p.clone()])))
}

fn data_source(d: &DataArgs, spec: SyntheticSpec) -> Outcome<DataSource> {
    if d.format == Some(DataFormat::Synthetic) || d.data == "synthetic" {
        return Ok(DataSource::Synthetic(spec));
    }
    let dir = Path::new(&d.data);
    if !dir.is_dir() {
        return Err(input(format!("{}: not a data directory", dir.display())));
    }
    let found = match d.format {
        Some(DataFormat::Idx) => idx_source(dir)?,
        Some(DataFormat::Cifar10Bin) => cifar_source(dir)?,
        _ => match cifar_source(dir)? {
            Some(s) => Some(s),
            None => idx_source(dir)?,
        },
    };
    found.ok_or_else(|| input(format!("{}: no IDX or CIFAR-10 binary files found", dir.display())))
}

fn source_paths(s: &DataSource) -> Vec<PathBuf> {
    match s {
        DataSource::Synthetic(_) => vec![],
        DataSource::Idx { images, labels } => vec![images.clone(), labels.clone()],
        DataSource::Cifar(files) => files.clone(),
    }
}

fn ranges_csv(ranges: &[polyckt::trainer::RangeEstimate]) -> String {
    let mut s = String::from("layer,lo,hi,alpha,margin\n");
    for r in ranges {
        let _ = writeln!(s, "{},{},{},{},{}", r.layer, r.lo, r.hi, r.alpha, r.margin);
    }
    s
}

fn fits_csv(fits: &[polyckt::trainer::LayerFit]) -> String {
    let mut s = String::from("layer,lo,hi,max_error\n");
    for f in fits {
        let _ = writeln!(s, "{},{},{},{}", f.layer, f.lo, f.hi, f.max_error);
    }
    s
}

pub fn build(a: &BuildArgs) -> Outcome<Record> {
    let seed = resolve_seed(a.seed, None)?;
    let spec = ModelSpec {
        arch: a.arch,
        blocks: a.blocks,
        channels: a.channels,
        activations_per_block: a.activations_per_block,
        expansion: a.expansion,
        activation: a.activation,
    };
    let mut g = spec.build(a.in_channels, a.image, a.classes)?;
    if a.no_skips {
        g = g.without_skips();
    }
    if let Some(d) = a.degree {
        g = hecost::with_degree(&g, d);
    }
    let model = Model::init(g, seed)?;
    let outputs = save_model(&a.out, &model)?;
    println!(
        "{} nodes, {} activations, {} skips",
        model.graph.nodes().len(),
        model.graph.activation_ids().len(),
        model.graph.skips().len()
    );
    Ok(Record {
        config: json!({
            "model": spec,
            "in_channels": a.in_channels,
            "image": a.image,
            "classes": a.classes,
            "degree": a.degree,
            "no_skips": a.no_skips,
        }),
        outputs,
        seed: Some(seed),
        manifest: Some(manifest::in_dir(&a.out)),
        ..Record::default()
    })
}

fn load_splits(d: &DataArgs, file: &RunFile, seed: u64) -> Outcome<(Splits, Vec<PathBuf>)> {
    let source = data_source(d, file.synthetic)?;
    let splits = ingest_dataset(&source, file.split, seed)?;
    Ok((splits, source_paths(&source)))
}

fn train_summary(r: &polyckt::trainer::TrainReport) -> Value {
    json!({
        "accuracy": {
            "before": r.accuracy[0],
            "range_tuned": r.accuracy[1],
            "replaced": r.accuracy[2],
            "final": r.accuracy[3],
        },
        "envelope": { "before": r.envelope[0], "after": r.envelope[1] },
        "deviation_bound": r.deviation_bound,
        "activations": r.fits.len(),
        "max_fit_error": r.fits.iter().map(|f| f.max_error).fold(0.0, f64::max),
    })
}

pub fn train(a: &TrainArgs) -> Outcome<Record> {
    let mut file = load_run_file(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, file.seed)?;
    file.seed = Some(seed);
    file.synthetic.seed = seed;
    let t = &mut file.train;
    t.seed = seed;
    if let Some(v) = a.degree {
        t.degree = v;
    }
    if let Some(v) = a.method {
        t.method = method(v);
    }
    if let Some(v) = a.pretrain_epochs {
        t.pretrain_epochs = v;
    }
    if let Some(v) = a.range_epochs {
        t.range_epochs = v;
    }
    if let Some(v) = a.finetune_epochs {
        t.finetune_epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.w_pre {
        t.w_pre = v;
    }
    if let Some(v) = a.w_post {
        t.w_post = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    file.train.check()?;

    let (splits, mut inputs) = load_splits(&a.data, &file, seed)?;
    let model = match &a.model {
        Some(dir) => {
            inputs.push(dir.clone());
            load_model(dir)?
        }
        None => {
            let s = splits.train.sample_shape();
            Model::init(file.model.build(s[0], s[1], splits.train.classes)?, seed)?
        }
    };
    let report = match train_he_friendly(&model, &splits, &file.train) {
        Err(TrainError::Diverged { phase, epoch, checkpoint }) => {
            let dir = a.out.join("checkpoint");
            save_model(&dir, &checkpoint)?;
            return Err(Failure::Numeric(format!(
                "training diverged in {phase} epoch {epoch}; last good weights saved to {}",
                dir.display()
            )));
        }
        r => r?,
    };

    let mut outputs = save_model(&a.out, &report.model)?;
    let summary = train_summary(&report);
    for (name, body) in [
        ("metrics.csv", report.metrics.to_csv()),
        ("ranges.csv", ranges_csv(&report.ranges)),
        ("fits.csv", fits_csv(&report.fits)),
        ("summary.json", pretty(&summary)),
    ] {
        let p = a.out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    print!("{}", pretty(&summary));
    Ok(Record {
        config: serde_json::to_value(&file).expect("config serializes"),
        inputs,
        outputs,
        seed: Some(seed),
        manifest: Some(manifest::in_dir(&a.out)),
    })
}

pub fn polyfy(a: &PolyfyArgs) -> Outcome<Record> {
    let mut file = load_run_file(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, file.seed)?;
    file.seed = Some(seed);
    file.synthetic.seed = seed;
    let t = &mut file.train;
    t.seed = seed;
    if let Some(v) = a.degree {
        t.degree = v;
    }
    if let Some(v) = a.method {
        t.method = method(v);
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.slack {
        t.range_slack = v;
    }
    file.train.check()?;
    let t = &file.train;

    let (splits, mut inputs) = load_splits(&a.data, &file, seed)?;
    let model = load_model(&a.model)?;
    inputs.push(a.model.clone());
    let ranges: Vec<_> = estimate_ranges(&model, &splits.range, t.alpha, &[])?
        .into_iter()
        .map(|r| r.with_margin(r.margin + t.range_slack * (r.hi - r.lo)))
        .collect();
    let (poly, fits) = polyfy_chained(&model, &ranges, t.degree, t.method)?;
    let bound = lipschitz_bound(&poly, &fits)?;
    let before = evaluate_split(&model, &splits.val, t.q, t.batch_size)?;
    let after = evaluate_split(&poly, &splits.val, t.q, t.batch_size)?;
    if !after.ce.is_finite() {
        return Err(Failure::Numeric(
            "polynomial model produced non-finite outputs on the validation set".into(),
        ));
    }

    let mut outputs = save_model(&a.out, &poly)?;
    let summary = json!({
        "degree": t.degree,
        "method": method_flag(t.method),
        "accuracy": { "before": before.accuracy, "after": after.accuracy },
        "deviation_bound": bound,
        "activations": fits.len(),
        "max_fit_error": fits.iter().map(|f| f.max_error).fold(0.0, f64::max),
    });
    for (name, body) in [
        ("ranges.csv", ranges_csv(&ranges)),
        ("fits.csv", fits_csv(&fits)),
        ("summary.json", pretty(&summary)),
    ] {
        let p = a.out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    print!("{}", pretty(&summary));
    Ok(Record {
        config: serde_json::to_value(&file).expect("config serializes"),
        inputs,
        outputs,
        seed: Some(seed),
        manifest: Some(manifest::in_dir(&a.out)),
    })
}

pub fn analyze(a: &AnalyzeArgs) -> Outcome<Record> {
    let (mut g, path) = load_graph_args(&a.graph)?;
    if a.no_skips {
        g = g.without_skips();
    }
    let profile = load_profile(a.graph.profile.as_deref())?;
    let an = hecost::analyze(&g, &profile)?;
    let lat = hecost::latency_breakdown(&an)?;
    let categories: BTreeMap<&str, Value> = lat
        .categories
        .iter()
        .map(|(c, v, share)| (c.name(), json!({ "latency": v, "share": share })))
        .collect();
    let summary = json!({
        "command": "analyze",
        "label": a.label,
        "degree": a.graph.degree.or_else(|| poly_degree(&g)),
        "skips": g.skips().len(),
        "bootstraps": an.count_bootstraps(),
        "mult_depth": an.mult_depth(),
        "latency": lat.total,
        "categories": categories,
    });
    print!("{}", pretty(&summary));

    let mut inputs = vec![path];
    inputs.extend(a.graph.profile.clone());
    let config = json!({
        "label": a.label,
        "degree": a.graph.degree,
        "no_skips": a.no_skips,
        "profile": profile,
    });
    let Some(out) = &a.out else {
        return Ok(Record { config, inputs, ..Record::default() });
    };
    let mut outputs = vec![];
    for (name, body) in [
        ("report.csv", hecost::report_csv(&an)?),
        ("cost_matrix.csv", an.cost_matrix().to_csv()),
        ("latency.csv", lat.to_csv()),
        ("summary.json", pretty(&summary)),
    ] {
        let p = out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    Ok(Record {
        config,
        inputs,
        outputs,
        seed: None,
        manifest: Some(manifest::in_dir(out)),
    })
}

pub fn place_skips(a: &PlaceSkipsArgs) -> Outcome<Record> {
    let (mut g, path) = load_graph_args(&a.graph)?;
    if a.strip {
        g = g.without_skips();
    }
    let profile = load_profile(a.graph.profile.as_deref())?;
    let limits = PlacementLimits {
        budget: a.budget,
        min_skips: a.min_skips,
    };
    let plan = scopt::place_skips(&g, &profile, limits)?;
    let before = hecost::count_bootstraps(&g, &profile)?;
    let after = hecost::count_bootstraps(&plan.graph, &profile)?;
    let summary = json!({
        "placements": plan.placements,
        "total_cost": plan.total_cost,
        "bootstraps_before": before,
        "bootstraps_after": after,
    });
    print!("{}", plan.to_csv());

    let mut inputs = vec![path];
    inputs.extend(a.graph.profile.clone());
    let config = json!({
        "degree": a.graph.degree,
        "strip": a.strip,
        "budget": a.budget,
        "min_skips": a.min_skips,
        "profile": profile,
    });
    let Some(out) = &a.out else {
        return Ok(Record { config, inputs, ..Record::default() });
    };
    make_dir(out)?;
    let gp = out.join("graph.json");
    save_graph(&plan.graph, &gp)?;
    let mut outputs = vec![gp];
    for (name, body) in [("plan.csv", plan.to_csv()), ("summary.json", pretty(&summary))] {
        let p = out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    Ok(Record {
        config,
        inputs,
        outputs,
        seed: None,
        manifest: Some(manifest::in_dir(out)),
    })
}

pub fn remove_skips(a: &RemoveSkipsArgs) -> Outcome<Record> {
    let sched = scopt::removal_schedule(a.n)?;
    if let Some(e) = a.epoch {
        if e > a.n {
            return Err(usage(format!("--epoch {e} is past the schedule's {} epochs", a.n)));
        }
    }
    let config = json!({ "n": a.n, "epoch": a.epoch });
    let inputs: Vec<PathBuf> = a.graph.iter().cloned().collect();
    let Some(out) = &a.out else {
        print!("{}", sched.to_csv());
        return Ok(Record { config, inputs, ..Record::default() });
    };
    let mut outputs = vec![];
    let summary = json!({
        "n": sched.n,
        "scales": sched.scales,
        "extra_epochs": sched.extra_epochs(),
    });
    for (name, body) in [("schedule.csv", sched.to_csv()), ("summary.json", pretty(&summary))] {
        let p = out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    if let (Some(path), Some(e)) = (&a.graph, a.epoch) {
        let scale = sched.at(e);
        let mut g = scopt::apply_skip_scale(&read_graph(path)?, scale)?;
        if scale == 0.0 {
            g = g.prune();
        }
        let gp = out.join("graph.json");
        save_graph(&g, &gp)?;
        outputs.push(gp);
    }
    print!("{}", sched.to_csv());
    Ok(Record {
        config,
        inputs,
        outputs,
        seed: None,
        manifest: Some(manifest::in_dir(out)),
    })
}

fn synthetic_inputs(g: &NetworkGraph, n: usize, seed: u64) -> Outcome<polyckt::numcore::Tensor> {
    let shape = g
        .input_id()
        .and_then(|id| g.node(id))
        .map(|n| n.shape.clone())
        .ok_or_else(|| input("graph has no input"))?;
    let [channels, h, w] = shape[..] else {
        return Err(input(format!("synthetic inputs need a [C, H, W] input, graph has {shape:?}")));
    };
    if h != w {
        return Err(usage(format!("synthetic inputs need square images, graph has {h}x{w}")));
    }
    let data: Dataset = synthetic(SyntheticSpec {
        samples: n,
        channels,
        size: h,
        seed,
        ..SyntheticSpec::default()
    })?;
    Ok(data.images)
}

pub fn simulate(a: &SimulateArgs) -> Outcome<Record> {
    let (graph_path, weights_path) = match (&a.model, &a.graph, &a.weights) {
        (Some(m), _, _) => (m.join("graph.json"), m.join("weights.pckt")),
        (None, Some(g), Some(w)) => (g.clone(), w.clone()),
        _ => return Err(usage("simulate needs --model, or --graph with --weights")),
    };
    let graph = read_graph(&graph_path)?;
    let weights = read_weights(&graph, &weights_path)?;
    let mut profile = load_profile(a.profile.as_deref())?;
    if let Some(f) = a.frac_bits {
        profile.frac_bits = f;
        profile.check().map_err(|e| usage(format!("--frac-bits {f}: {e}")))?;
    }
    let seed = resolve_seed(a.seed, None)?;
    let mut inputs = vec![graph_path, weights_path];
    let x = match (&a.inputs, a.synthetic) {
        (Some(p), _) => {
            let bytes = std::fs::read(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            let mut map = at(p, weights_from_bytes(&bytes))?;
            inputs.push(p.clone());
            match map.remove("inputs") {
                Some(t) => t,
                None if map.len() == 1 => map.into_values().next().expect("one entry"),
                None => return Err(input(format!("{}: no `inputs` tensor", p.display()))),
            }
        }
        (None, Some(n)) if n > 0 => synthetic_inputs(&graph, n, seed)?,
        (None, Some(_)) => return Err(usage("--synthetic needs at least one sample")),
        (None, None) => return Err(usage("one of --inputs or --synthetic is required")),
    };
    inputs.extend(a.profile.clone());
    let noise = match a.noise_sigma {
        Some(s) if !(s.is_finite() && s >= 0.0) => return Err(usage("--noise-sigma must be finite and non-negative")),
        Some(sigma) if sigma > 0.0 => Some(NoiseSpec { sigma, seed }),
        _ => None,
    };
    let r = hesim::simulate(&graph, &weights, &x, &profile, noise)?;
    let summary = r.trace.summary_json();
    println!("{summary}");

    let config = json!({
        "synthetic": a.synthetic,
        "frac_bits": profile.frac_bits,
        "noise_sigma": a.noise_sigma,
        "profile": profile,
    });
    let Some(out) = &a.out else {
        return Ok(Record {
            config,
            inputs,
            seed: Some(seed),
            ..Record::default()
        });
    };
    let mut w = Weights::new();
    w.insert("outputs".into(), r.output.clone());
    w.insert("exact".into(), r.exact.clone());
    let mut outputs = vec![];
    for (name, body) in [
        ("trace.csv", r.trace.to_csv().into_bytes()),
        ("summary.json", (summary + "\n").into_bytes()),
        ("outputs.pckt", weights_to_bytes(&w)),
    ] {
        let p = out.join(name);
        write(&p, body)?;
        outputs.push(p);
    }
    Ok(Record {
        config,
        inputs,
        outputs,
        seed: Some(seed),
        manifest: Some(manifest::in_dir(out)),
    })
}

#[derive(Deserialize)]
struct AnalyzeSummary {
    command: String,
    label: String,
    degree: Option<usize>,
    skips: usize,
    bootstraps: usize,
    latency: f64,
}

fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> Outcome<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_summaries(&p, found)?;
        } else if file_name(&p) == "summary.json" {
            found.push(p);
        }
    }
    Ok(())
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

pub fn report(a: &ReportArgs) -> Outcome<Record> {
    let mut paths = vec![];
    find_summaries(&a.runs, &mut paths)?;
    // (label, degree) -> (with skips, without skips)
    type Pair = (Option<AnalyzeSummary>, Option<AnalyzeSummary>);
    let mut groups: BTreeMap<(String, Option<usize>), Pair> = BTreeMap::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        let Ok(s) = serde_json::from_str::<AnalyzeSummary>(&text) else {
            continue;
        };
        if s.command != "analyze" {
            continue;
        }
        let slot = groups.entry((s.label.clone(), s.degree)).or_default();
        let (target, which) = if s.skips > 0 { (&mut slot.0, "with") } else { (&mut slot.1, "without") };
        if target.is_some() {
            return Err(input(format!(
                "{}: second analysis {which} skips for label {:?} degree {:?}",
                p.display(),
                s.label,
                s.degree
            )));
        }
        *target = Some(s);
    }
    let mut csv = String::from(
        "label,degree,bootstraps_with,bootstraps_without,ratio,latency_with,latency_without,total_speedup\n",
    );
    let mut rows = 0;
    for ((label, degree), pair) in &groups {
        let (Some(w), Some(wo)) = pair else { continue };
        rows += 1;
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{},{},{}",
            degree.map_or(String::new(), |d| d.to_string()),
            w.bootstraps,
            wo.bootstraps,
            ratio(w.bootstraps as f64, wo.bootstraps as f64),
            w.latency,
            wo.latency,
            ratio(w.latency, wo.latency),
        );
    }
    if rows == 0 {
        return Err(input(format!(
            "{}: no pair of analyses with and without skips",
            a.runs.display()
        )));
    }
    let config = json!({ "runs": a.runs });
    match &a.out {
        Some(out) => {
            write(out, &csv)?;
            Ok(Record {
                config,
                inputs: paths,
                outputs: vec![out.clone()],
                seed: None,
                manifest: Some(manifest::beside(out)),
            })
        }
        None => {
            print!("{csv}");
            Ok(Record {
                config,
                inputs: paths,
                ..Record::default()
            })
        }
    }
}
