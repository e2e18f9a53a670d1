//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 are properties and gate the process exit code. Criteria 6-10
//! are desk-scale reproductions of published numbers; they are reported but
//! do not fail the run.
//!
//! Oracles here are written independently of the library: a dense normalized
//! adjacency, brute-force accuracy, a compensated softmax cross-entropy and an
//! end-to-end finite-difference check with its own loss.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use ggnn::check::{equivalence_suite, gradient_suite};
use ggnn::data::{DatasetBundle, DatasetSource, SplitSpec};
use ggnn::engine::{aggregate_forward, softmax_cross_entropy, Tensor};
use ggnn::experiment::{
    cmd_compare, cmd_sweep, cmd_train, compare_presets, CompareRow, ExperimentSpec, Precision, DEFAULT_ALPHAS,
};
use ggnn::model::{Model, ModelConfig, Phase, Variant};
use ggnn::train::{evaluate, run_experiment, Metric, TrainConfig};
use ggnn::{Graph, RngStream};
use tempfile::TempDir;

const SEED: u64 = 20240;

struct Tally {
    gating_failures: Vec<String>,
    reported_failures: Vec<String>,
}

impl Tally {
    fn record(&mut self, id: &str, gating: bool, pass: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            if gating {
                self.gating_failures.push(id.to_string());
            } else {
                self.reported_failures.push(id.to_string());
            }
        }
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_tensor(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Edge list with duplicates, reversed pairs and self-loops mixed in.
fn messy_edges(rng: &mut RngStream, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.next_f64() < density / 2.0 {
                edges.push((u, v));
            }
        }
        if rng.next_f64() < 0.1 {
            edges.push((u, u));
        }
    }
    edges
}

// ---------------------------------------------------------------- criterion 1

/// Mean cross-entropy over `mask`, computed here rather than by the library.
fn oracle_loss(logits: &Tensor, labels: &[usize], mask: &[usize]) -> (f64, Tensor) {
    let k = logits.cols();
    let mut grad = Tensor::zeros(logits.rows(), k);
    let mut total = 0.0;
    for &u in mask {
        let row = logits.row(u);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
        total += m + s.ln() - row[labels[u]];
        for j in 0..k {
            let p = (row[j] - m).exp() / s;
            let y = if j == labels[u] { 1.0 } else { 0.0 };
            grad.set(u, j, (p - y) / mask.len() as f64);
        }
    }
    (total / mask.len() as f64, grad)
}

fn get_flat(model: &mut Model) -> (Vec<f64>, Vec<f64>) {
    let (mut p, mut g) = (Vec::new(), Vec::new());
    model.for_each_param(|v, d| {
        p.extend_from_slice(v);
        g.extend_from_slice(d);
    });
    (p, g)
}

fn set_flat(model: &mut Model, flat: &[f64]) {
    let mut at = 0;
    model.for_each_param(|v, _| {
        v.copy_from_slice(&flat[at..at + v.len()]);
        at += v.len();
    });
    model.mark_updated();
}

/// Worst relative error of one variant over `trials` random 2-layer models
/// on 6-node graphs, using Richardson-extrapolated central differences.
/// Trials where a probe flips a ReLU or a MaxPool winner are redrawn.
fn end_to_end_error(variant: Variant, trials: usize, seed: u64) -> (f64, usize) {
    const H: f64 = 1e-2;
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    let mut redrawn = 0;
    let mut done = 0;
    while done < trials {
        let g = Graph::build(&messy_edges(&mut rng, 6, 0.4), 6).unwrap();
        let cfg = ModelConfig {
            variant,
            num_layers: 2,
            input_dim: 5,
            hidden_dim: 4,
            output_dim: 3,
            alpha: 0.3,
            dropout_p: 0.2,
            seed: rng.next_u64(),
        };
        let mut model = Model::<f64>::init(cfg, &g).unwrap();
        if let Some(t) = model.theta_mut() {
            for v in t.theta.iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let x = random_tensor(&mut rng, 6, 5);
        let labels: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
        let mask = [0, 2, 3, 5];
        let drop_seed = rng.next_u64();

        let (logits, trace) = model
            .forward(&x, &g, Phase::Train, &mut RngStream::new(drop_seed))
            .unwrap();
        let pattern = trace.activation_pattern();
        let (_, grad_logits) = oracle_loss(&logits, &labels, &mask);
        model.zero_grad();
        model.backward(&trace, &g, &grad_logits).unwrap();
        drop(trace);
        let (point, analytic) = get_flat(&mut model);

        let mut crossed = false;
        let mut loss_at = |p: &[f64], model: &mut Model| {
            set_flat(model, p);
            let (logits, trace) = model
                .forward(&x, &g, Phase::Train, &mut RngStream::new(drop_seed))
                .unwrap();
            crossed |= trace.activation_pattern() != pattern;
            oracle_loss(&logits, &labels, &mask).0
        };
        let mut errors = Vec::with_capacity(point.len());
        for i in 0..point.len() {
            let mut diff = |h: f64| {
                let mut p = point.clone();
                p[i] += h;
                let up = loss_at(&p, &mut model);
                p[i] -= 2.0 * h;
                let down = loss_at(&p, &mut model);
                (up - down) / (2.0 * h)
            };
            let numeric = (4.0 * diff(H / 2.0) - diff(H)) / 3.0;
            errors.push(rel(analytic[i], numeric));
        }
        if crossed {
            redrawn += 1;
            continue;
        }
        worst = errors.into_iter().fold(worst, f64::max);
        done += 1;
    }
    (worst, redrawn)
}

fn criterion_1(t: &mut Tally) {
    let start = Instant::now();
    let suite = gradient_suite(100, SEED).unwrap();
    let mut pass = suite.iter().all(|o| o.passed);
    for o in &suite {
        println!(
            "    {} {}: {}",
            if o.passed { "ok  " } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        let (worst, redrawn) = end_to_end_error(v, 100, SEED + 1 + i as u64);
        let ok = worst < 1e-5;
        pass &= ok;
        println!(
            "    {} oracle end-to-end {v}: max rel err {worst:.3e} over 100 trials ({redrawn} redrawn, tol 1e-5)",
            if ok { "ok  " } else { "FAIL" }
        );
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    t.record(
        "1 gradient suite",
        true,
        pass,
        format!("kernels < 1e-6, models < 1e-5, {secs:.1}s (budget 30s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

/// Dropout-free MLP written out by hand, summing in the same order as the
/// library's affine kernel.
fn naive_mlp(model: &Model, x: &Tensor) -> Tensor {
    let mut h = x.clone();
    let layers = model.config().num_layers;
    for l in 0..layers {
        let (w, b) = (&model.weights()[l].value, &model.biases()[l].value);
        let mut out = Tensor::zeros(h.rows(), w.cols());
        for i in 0..h.rows() {
            for j in 0..w.cols() {
                let mut acc = b.values()[j];
                for k in 0..w.rows() {
                    if h.get(i, k) != 0.0 {
                        acc += h.get(i, k) * w.get(k, j);
                    }
                }
                out.set(i, j, if l + 1 < layers { acc.max(0.0) } else { acc });
            }
        }
        h = out;
    }
    h
}

fn criterion_2(t: &mut Tally) {
    let suite = equivalence_suite(SEED).unwrap();
    let mut pass = suite.iter().all(|o| o.passed);
    for o in &suite {
        println!(
            "    {} {}: {}",
            if o.passed { "ok  " } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let mut rng = RngStream::new(SEED);
    let g = Graph::build(&messy_edges(&mut rng, 10, 0.4), 10).unwrap();
    let x = random_tensor(&mut rng, 10, 7);
    let cfg = ModelConfig {
        variant: Variant::Pmlp,
        num_layers: 3,
        input_dim: 7,
        hidden_dim: 5,
        output_dim: 3,
        alpha: 0.1,
        dropout_p: 0.0,
        seed: SEED,
    };
    let pmlp = Model::<f64>::init(cfg, &g).unwrap();
    let (y, _) = pmlp.forward(&x, &g, Phase::Train, &mut RngStream::new(0)).unwrap();
    let same = y == naive_mlp(&pmlp, &x);
    pass &= same;
    println!(
        "    {} pmlp train == hand-written mlp: bit-exact",
        if same { "ok  " } else { "FAIL" }
    );
    t.record(
        "2 degeneration equivalences",
        true,
        pass,
        "residual a=0, learnable theta=40, pmlp phases".into(),
    );
}

// ---------------------------------------------------------------- criterion 3

/// D^-1/2 (A + I) D^-1/2 · h with a dense matrix built from the raw edge list.
fn dense_aggregate(edges: &[(usize, usize)], n: usize, h: &Tensor) -> Tensor {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    for (u, row) in a.iter_mut().enumerate() {
        row[u] = 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut out = Tensor::zeros(n, h.cols());
    for u in 0..n {
        for v in 0..n {
            let c = a[u][v] / (d[u] * d[v]).sqrt();
            for j in 0..h.cols() {
                out.set(u, j, out.get(u, j) + c * h.get(v, j));
            }
        }
    }
    out
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for x in xs {
        let (t, e) = two_sum(s, x);
        s = t;
        c += e;
    }
    s + c
}

fn ce_oracle(logits: &Tensor, labels: &[usize], mask: &[usize]) -> f64 {
    let rows = mask.iter().map(|&u| {
        let row = logits.row(u);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = compensated_sum(row.iter().map(|x| (x - m).exp()));
        compensated_sum([m, s.ln(), -row[labels[u]]].into_iter())
    });
    compensated_sum(rows) / mask.len() as f64
}

fn criterion_3(t: &mut Tally) {
    let mut rng = RngStream::new(SEED);
    let (mut agg_worst, mut ce_worst): (f64, f64) = (0.0, 0.0);
    let mut acc_mismatch = 0;
    for _ in 0..200 {
        let n = 1 + rng.below(20);
        let density = rng.next_f64();
        let edges = messy_edges(&mut rng, n, density);
        let g = Graph::build(&edges, n).unwrap();
        let h = random_tensor(&mut rng, n, 4);
        let sparse = aggregate_forward(&g, &h, None).unwrap();
        let dense = dense_aggregate(&edges, n, &h);
        for (a, b) in sparse.values().iter().zip(dense.values()) {
            agg_worst = agg_worst.max((a - b).abs());
        }

        let k = 2 + rng.below(9);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let mut nodes: Vec<usize> = (0..n).filter(|_| rng.next_f64() < 0.6).collect();
        if nodes.is_empty() {
            nodes.push(rng.below(n));
        }
        // Small integer logits make ties common.
        let tied = Tensor::from_vec(n, k, (0..n * k).map(|_| rng.below(3) as f64).collect()).unwrap();
        let brute = nodes
            .iter()
            .filter(|&&u| {
                let row = tied.row(u);
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                best == labels[u]
            })
            .count() as f64
            / nodes.len() as f64;
        if evaluate(&tied, &labels, &nodes, Metric::Accuracy).unwrap() != brute {
            acc_mismatch += 1;
        }

        let logits = Tensor::from_vec(n, k, (0..n * k).map(|_| rng.uniform(-50.0, 50.0)).collect()).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &labels, &nodes).unwrap();
        ce_worst = ce_worst.max(rel(loss, ce_oracle(&logits, &labels, &nodes)));
    }
    let pass = agg_worst <= 1e-12 && acc_mismatch == 0 && ce_worst <= 1e-10;
    t.record(
        "3 oracle equivalences",
        true,
        pass,
        format!(
            "200 graphs: aggregation max abs diff {agg_worst:.2e} (tol 1e-12), accuracy mismatches {acc_mismatch}, \
             cross-entropy max rel err {ce_worst:.2e} (tol 1e-10)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(t: &mut Tally) {
    let mut pass = true;
    let mut details = Vec::new();
    for name in ["cora", "citeseer"] {
        let source = DatasetSource::named(name, data_dir()).unwrap();
        let bundle = DatasetBundle::load(&source, 0, &SplitSpec::default()).unwrap();
        let dims = [bundle.feature_dim(), 64, bundle.class_count];
        let dense: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let undirected: BTreeSet<(usize, usize)> = bundle.graph.edge_list().into_iter().collect();
        let count = |variant| {
            let cfg = ModelConfig {
                variant,
                num_layers: 2,
                input_dim: dims[0],
                hidden_dim: 64,
                output_dim: dims[2],
                alpha: 0.1,
                dropout_p: 0.5,
                seed: 0,
            };
            Model::<f64>::init(cfg, &bundle.graph).unwrap().num_parameters()
        };
        let counts: Vec<usize> = Variant::ALL.into_iter().map(count).collect();
        let extra = undirected.len() + bundle.num_nodes();
        let ok = counts[..3].iter().all(|&c| c == dense) && counts[3] == dense + extra;
        pass &= ok;
        details.push(format!(
            "{name}: gnn/pmlp/residual {}/{}/{}, learnable {} = {dense} + {} edges + {} nodes",
            counts[0],
            counts[1],
            counts[2],
            counts[3],
            undirected.len(),
            bundle.num_nodes()
        ));
    }
    t.record("4 parameter parity", true, pass, details.join("; "));
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(t: &mut Tally) {
    let tmp = TempDir::new().unwrap();
    let mut spec = ExperimentSpec::default();
    spec.dataset.data_dir = data_dir();
    spec.model.variant = Variant::LearnableGgnn;
    spec.train.epochs = 10;
    spec.train.num_runs = 2;
    spec.run.precision = Precision::F64;
    spec.run.threads = 1;
    let mut files = Vec::new();
    for sub in ["a", "b"] {
        spec.run.out_dir = tmp.path().join(sub);
        cmd_train(&spec).unwrap();
        let mut names: Vec<_> = fs::read_dir(&spec.run.out_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "timing.json")
            .collect();
        names.sort();
        let contents: Vec<_> = names
            .iter()
            .map(|n| fs::read(spec.run.out_dir.join(n)).unwrap())
            .collect();
        files.push((names, contents));
    }
    let pass = files[0] == files[1];
    t.record(
        "5 determinism",
        true,
        pass,
        format!(
            "cora learnable_ggnn, 2 runs x 10 epochs, f64, 1 thread: {} files byte-identical",
            files[0].0.len()
        ),
    );
}

// ------------------------------------------------------------ criteria 6 - 10

fn spec_for(dataset: &str, out: &TempDir) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.dataset.name = dataset.into();
    spec.dataset.data_dir = data_dir();
    spec.run.out_dir = out.path().join(dataset);
    spec.run.precision = Precision::F64;
    spec
}

fn test_acc(rows: &[CompareRow], v: Variant) -> (f64, f64) {
    let a = &rows.iter().find(|r| r.variant == v).unwrap().report.aggregate;
    (
        100.0 * a.test_mean.unwrap_or(f64::NAN),
        100.0 * a.test_std.unwrap_or(f64::NAN),
    )
}

fn seconds(rows: &[CompareRow], v: Variant) -> f64 {
    rows.iter().find(|r| r.variant == v).unwrap().report.mean_seconds()
}

fn band(t: &mut Tally, id: &str, what: &str, (mean, std): (f64, f64), lo: f64, hi: f64, extra: &str) {
    let pass = (lo..=hi).contains(&mean);
    t.record(
        id,
        false,
        pass,
        format!("{what}: test acc {mean:.2} +- {std:.2}, band [{lo}, {hi}]{extra}"),
    );
}

fn criteria_6_to_9(t: &mut Tally, out: &TempDir) {
    let start = Instant::now();
    let cora = cmd_compare(&spec_for("cora", out)).unwrap();
    let citeseer = cmd_compare(&spec_for("citeseer", out)).unwrap();
    println!(
        "    compare on cora and citeseer took {:.0}s",
        start.elapsed().as_secs_f64()
    );
    for (name, rows) in [("cora", &cora), ("citeseer", &citeseer)] {
        for r in rows.iter() {
            let (m, s) = test_acc(rows, r.variant);
            println!(
                "    {name} {:<15} test {m:.2} +- {s:.2}  ({:.1}s/run)",
                r.variant.name(),
                r.report.mean_seconds()
            );
        }
    }

    let secs = seconds(&cora, Variant::LearnableGgnn);
    let (mean, std) = test_acc(&cora, Variant::LearnableGgnn);
    let pass = (71.7..=77.7).contains(&mean) && secs < 120.0;
    t.record(
        "6 cora learnable_ggnn",
        false,
        pass,
        format!("test acc {mean:.2} +- {std:.2}, band [71.7, 77.7]; {secs:.1}s/run (budget 120s)"),
    );
    band(
        t,
        "7 cora residual_ggnn",
        "alpha=0.1, 2 layers",
        test_acc(&cora, Variant::ResidualGgnn),
        72.1,
        78.1,
        "",
    );
    band(
        t,
        "8a citeseer learnable_ggnn",
        "",
        test_acc(&citeseer, Variant::LearnableGgnn),
        64.5,
        70.5,
        "",
    );
    band(
        t,
        "8b citeseer residual_ggnn",
        "alpha=0.13",
        test_acc(&citeseer, Variant::ResidualGgnn),
        64.3,
        70.3,
        "",
    );

    for (name, rows) in [("cora", &cora), ("citeseer", &citeseer)] {
        let m = |v| test_acc(rows, v).0;
        let ggnn = m(Variant::ResidualGgnn).min(m(Variant::LearnableGgnn));
        let pass = ggnn > m(Variant::Pmlp) && m(Variant::Pmlp) > m(Variant::Gnn);
        t.record(
            &format!("9 ordering {name}"),
            false,
            pass,
            format!(
                "min(ggnn) {ggnn:.2} > pmlp {:.2} > gnn {:.2} required",
                m(Variant::Pmlp),
                m(Variant::Gnn)
            ),
        );
    }
}

fn criterion_10(t: &mut Tally, out: &TempDir) {
    let residual = compare_presets()
        .into_iter()
        .find(|p| p.variant == Variant::ResidualGgnn)
        .unwrap();
    let mut spec = spec_for("cora", out);
    spec.run.out_dir = out.path().join("sweep");
    spec.model.variant = Variant::ResidualGgnn;
    spec.model.dropout_p = residual.dropout_p;
    spec.model.hidden_dim = residual.hidden_dim;
    spec.train.learning_rate = residual.learning_rate;
    spec.train.weight_decay = residual.weight_decay;
    spec.train.epochs = residual.epochs;
    spec.sweep.alphas = Some(DEFAULT_ALPHAS.to_vec());
    let points = cmd_sweep(&spec).unwrap();
    let best = points.iter().fold(&points[0], |b, p| {
        if p.test_mean.unwrap_or(f64::NAN) > b.test_mean.unwrap_or(f64::NAN) {
            p
        } else {
            b
        }
    });
    let curve: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.2}", p.alpha, 100.0 * p.test_mean.unwrap_or(f64::NAN)))
        .collect();
    t.record(
        "10a alpha sweep",
        false,
        (0.05..=0.2).contains(&best.alpha),
        format!(
            "cora 2-layer residual, best alpha {} in [0.05, 0.2] required; {}",
            best.alpha,
            curve.join(" ")
        ),
    );

    let source = DatasetSource::named("cora", data_dir()).unwrap();
    let bundle = DatasetBundle::load(&source, 0, &SplitSpec::default()).unwrap();
    let mut deep = Vec::new();
    for p in compare_presets() {
        if p.variant != Variant::ResidualGgnn && p.variant != Variant::Gnn {
            continue;
        }
        let model = ModelConfig {
            variant: p.variant,
            num_layers: 8,
            input_dim: bundle.feature_dim(),
            hidden_dim: p.hidden_dim,
            output_dim: bundle.class_count,
            alpha: 0.1,
            dropout_p: p.dropout_p,
            seed: 0,
        };
        let train = TrainConfig {
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            epochs: p.epochs,
            ..TrainConfig::default()
        };
        let report = run_experiment::<f64>(&model, &bundle, &train, 1).unwrap().report;
        let a = &report.aggregate;
        deep.push((p.variant, 100.0 * a.test_mean.unwrap_or(f64::NAN), a.runs_diverged));
    }
    let (r, g) = (
        &deep.iter().find(|d| d.0 == Variant::ResidualGgnn).unwrap(),
        &deep.iter().find(|d| d.0 == Variant::Gnn).unwrap(),
    );
    t.record(
        "10b depth",
        false,
        r.1 > g.1,
        format!(
            "cora 8 layers: residual_ggnn {:.2} > gnn {:.2} required ({} / {} runs diverged)",
            r.1, g.1, r.2, g.2
        ),
    );
}

fn main() {
    let mut t = Tally {
        gating_failures: Vec::new(),
        reported_failures: Vec::new(),
    };
    let start = Instant::now();
    criterion_1(&mut t);
    criterion_2(&mut t);
    criterion_3(&mut t);
    criterion_4(&mut t);
    criterion_5(&mut t);
    let out = TempDir::new().unwrap();
    criteria_6_to_9(&mut t, &out);
    criterion_10(&mut t, &out);
    println!(
        "acceptance: {:.0}s; gating failures {:?}; reported failures {:?}",
        start.elapsed().as_secs_f64(),
        t.gating_failures,
        t.reported_failures
    );
    if !t.gating_failures.is_empty() {
        std::process::exit(1);
    }
}
