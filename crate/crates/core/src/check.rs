//! Self-test suites behind `ggnn check`: finite-difference gradient checks
//! of every kernel and model variant, and the degeneration equivalences
//! between variants.

use std::cell::Cell;
use std::rc::Rc;

use crate::engine::*;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{Model, ModelConfig, Phase, Variant};
use crate::rng::RngStream;

pub const KERNEL_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-5;
/// Coarse step of the extrapolated end-to-end model checks. Model
/// gradients can be as small as 1e-8, where the roundoff of a plain 1e-5
/// step (about 1e-11 absolute) alone exceeds the tolerance. Probes this far
/// out do cross kinks now and then; those trials are redrawn.
pub const MODEL_EPS: f64 = 1e-2;
/// Coarse step of the extrapolated kernel checks, below [`KINK_MARGIN`] so
/// no probe crosses a kink or flips a MaxPool winner. Kernel gradients near
/// 1e-6 occur in a few trials per thousand, and a plain 1e-5 step has
/// roundoff of about 1e-11 absolute, which alone breaks the tolerance there.
pub const KERNEL_EPS: f64 = 5e-4;
/// Kernel inputs closer than this to a ReLU kink or a MaxPool tie are
/// redrawn. Model trials instead compare activation patterns at every probe.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn bound(name: &str, worst: f64, tolerance: f64, trials: usize) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: worst < tolerance,
            detail: format!("max rel err {worst:.3e} over {trials} trials (tol {tolerance:.0e})"),
        }
    }

    fn exact(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

fn uniform(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn tensor(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, uniform(rng, rows * cols)).expect("shape matches")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Random simple graph; each pair is an edge with probability `density`.
pub fn random_graph(rng: &mut RngStream, n: usize, density: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.next_f64() < density {
                edges.push((u, v));
            }
        }
    }
    Graph::build(&edges, n).expect("nodes in range")
}

struct Trial {
    value: Box<dyn FnMut(&[f64]) -> Result<f64>>,
    gradient: Vec<f64>,
    point: Vec<f64>,
    /// Set by `value` when a probe left the smooth piece of the base point.
    crossed: Rc<Cell<bool>>,
}

impl Trial {
    fn new(value: impl FnMut(&[f64]) -> Result<f64> + 'static, gradient: Vec<f64>, point: Vec<f64>) -> Self {
        Trial {
            value: Box::new(value),
            gradient,
            point,
            crossed: Rc::default(),
        }
    }
}

/// `None` asks for a redraw.
type Problem = Option<Trial>;

/// Worst relative error over `trials` problems drawn by `make`. Trials whose
/// probes cross a kink are redrawn.
fn worst_over<F>(trials: usize, seed: u64, eps: f64, extrapolate: bool, mut make: F) -> Result<f64>
where
    F: FnMut(&mut RngStream) -> Result<Problem>,
{
    let mut rng = RngStream::new(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < trials {
        let Some(trial) = make(&mut rng)? else {
            continue;
        };
        let err = if extrapolate {
            grad_check_extrapolated(trial.value, &trial.gradient, &trial.point, eps)?
        } else {
            grad_check(trial.value, &trial.gradient, &trial.point, eps)?
        };
        if trial.crossed.get() {
            continue;
        }
        worst = worst.max(err);
        done += 1;
    }
    Ok(worst)
}

fn affine_problem(rng: &mut RngStream) -> Result<Problem> {
    let (n, di, d) = (4, 3, 2);
    let x = tensor(rng, n, di);
    let w = tensor(rng, di, d);
    let b = tensor(rng, 1, d);
    let r = tensor(rng, n, d);
    let (mut gx, mut gw, mut gb) = (x.zeros_like(), w.zeros_like(), b.zeros_like());
    affine_backward(&r, &x, &w, Some(&mut gx), &mut gw, &mut gb)?;
    let point = [x.values(), w.values(), b.values()].concat();
    let grad = [gx.values(), gw.values(), gb.values()].concat();
    let f = move |p: &[f64]| {
        let x = Tensor::from_vec(n, di, p[..n * di].to_vec())?;
        let w = Tensor::from_vec(di, d, p[n * di..n * di + di * d].to_vec())?;
        let b = Tensor::from_vec(1, d, p[n * di + di * d..].to_vec())?;
        Ok(dot(&affine_forward(&x, &w, &b)?, &r))
    };
    Ok(Some(Trial::new(f, grad, point)))
}

fn relu_problem(rng: &mut RngStream) -> Result<Problem> {
    let x = tensor(rng, 3, 4);
    if x.values().iter().any(|v| v.abs() < KINK_MARGIN) {
        return Ok(None);
    }
    let r = tensor(rng, 3, 4);
    let (_, mask) = relu_forward(&x);
    let mut gx = x.zeros_like();
    relu_backward(&r, &mask, &mut gx)?;
    let f = move |p: &[f64]| Ok(dot(&relu_forward(&Tensor::from_vec(3, 4, p.to_vec())?).0, &r));
    Ok(Some(Trial::new(f, gx.into_values(), x.into_values())))
}

fn dropout_problem(rng: &mut RngStream) -> Result<Problem> {
    let x = tensor(rng, 3, 4);
    let r = tensor(rng, 3, 4);
    let seed = rng.next_u64();
    let (_, mask) = dropout_forward(&x, 0.4, &mut RngStream::new(seed), true)?;
    let mut gx = x.zeros_like();
    dropout_backward(&r, &mask, &mut gx)?;
    let f = move |p: &[f64]| {
        let x = Tensor::from_vec(3, 4, p.to_vec())?;
        Ok(dot(&dropout_forward(&x, 0.4, &mut RngStream::new(seed), true)?.0, &r))
    };
    Ok(Some(Trial::new(f, gx.into_values(), x.into_values())))
}

fn maxpool_problem(rng: &mut RngStream) -> Result<Problem> {
    let (n, di, d) = (3, 7, 3);
    let h = tensor(rng, n, di);
    for i in 0..n {
        for j in 0..d {
            let (s, e) = pool_bin(j, di, d);
            let mut bin: Vec<f64> = h.row(i)[s..e].to_vec();
            bin.sort_by(|a, b| b.total_cmp(a));
            if bin.len() > 1 && bin[0] - bin[1] < KINK_MARGIN {
                return Ok(None);
            }
        }
    }
    let r = tensor(rng, n, d);
    let (_, record) = maxpool_compress_forward(&h, d)?;
    let mut gh = h.zeros_like();
    maxpool_compress_backward(&r, &record, &mut gh)?;
    let f = move |p: &[f64]| {
        let h = Tensor::from_vec(n, di, p.to_vec())?;
        Ok(dot(&maxpool_compress_forward(&h, d)?.0, &r))
    };
    Ok(Some(Trial::new(f, gh.into_values(), h.into_values())))
}

fn aggregate_problem(rng: &mut RngStream) -> Result<Problem> {
    let g = random_graph(rng, 6, 0.4);
    let d = 3;
    let h = tensor(rng, 6, d);
    let r = tensor(rng, 6, d);
    let mut gates = EdgeParams::from_theta(
        uniform(rng, g.count_parameters_theta())
            .iter()
            .map(|t| 2.0 * t)
            .collect(),
    );
    let mut gh = h.zeros_like();
    aggregate_backward(&g, &r, &h, Some(&mut gates), Some(&mut gh))?;
    let nh = h.len();
    let point = [h.values(), &gates.theta[..]].concat();
    let grad = [gh.values(), &gates.grad[..]].concat();
    let f = move |p: &[f64]| {
        let h = Tensor::from_vec(6, d, p[..nh].to_vec())?;
        let gates = EdgeParams::from_theta(p[nh..].to_vec());
        Ok(dot(&aggregate_forward(&g, &h, Some(&gates))?, &r))
    };
    Ok(Some(Trial::new(f, grad, point)))
}

fn softmax_problem(rng: &mut RngStream) -> Result<Problem> {
    let logits = tensor(rng, 5, 4).scale(3.0);
    let labels: Vec<usize> = (0..5).map(|_| rng.below(4)).collect();
    let mask = vec![0, 2, 3];
    let (_, grad) = softmax_cross_entropy(&logits, &labels, &mask)?;
    let f = move |p: &[f64]| Ok(softmax_cross_entropy(&Tensor::from_vec(5, 4, p.to_vec())?, &labels, &mask)?.0);
    Ok(Some(Trial::new(f, grad.into_values(), logits.into_values())))
}

fn flatten(model: &mut Model) -> (Vec<f64>, Vec<f64>) {
    let (mut values, mut grads) = (Vec::new(), Vec::new());
    model.for_each_param(|p, g| {
        values.extend_from_slice(p);
        grads.extend_from_slice(g);
    });
    (values, grads)
}

fn load_flat(model: &mut Model, flat: &[f64]) {
    let mut at = 0;
    model.for_each_param(|p, _| {
        p.copy_from_slice(&flat[at..at + p.len()]);
        at += p.len();
    });
    model.mark_updated();
}

/// Two-layer `variant` on a random 6-node graph; the loss is the training
/// cross-entropy with a fixed dropout mask.
fn model_problem(variant: Variant) -> impl FnMut(&mut RngStream) -> Result<Problem> {
    move |rng| {
        let g = random_graph(rng, 6, 0.4);
        let config = ModelConfig {
            variant,
            num_layers: 2,
            input_dim: 5,
            hidden_dim: 4,
            output_dim: 3,
            alpha: 0.3,
            dropout_p: 0.2,
            seed: rng.next_u64(),
        };
        let mut model = Model::<f64>::init(config, &g)?;
        if let Some(t) = model.theta_mut() {
            t.theta = uniform(rng, t.len());
        }
        let x = tensor(rng, 6, 5);
        let labels: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
        let mask = vec![0, 1, 3, 4];
        let drop_seed = rng.next_u64();

        let (logits, trace) = model.forward(&x, &g, Phase::Train, &mut RngStream::new(drop_seed))?;
        if trace.kink_margin() == 0.0 {
            return Ok(None);
        }
        let pattern = trace.activation_pattern();
        let (_, grad_logits) = softmax_cross_entropy(&logits, &labels, &mask)?;
        model.backward(&trace, &g, &grad_logits)?;
        let (point, grad) = flatten(&mut model);
        let crossed = Rc::new(Cell::new(false));
        let flag = Rc::clone(&crossed);
        let f = move |p: &[f64]| {
            load_flat(&mut model, p);
            let (logits, trace) = model.forward(&x, &g, Phase::Train, &mut RngStream::new(drop_seed))?;
            if trace.activation_pattern() != pattern {
                flag.set(true);
            }
            Ok(softmax_cross_entropy(&logits, &labels, &mask)?.0)
        };
        Ok(Some(Trial {
            crossed,
            ..Trial::new(f, grad, point)
        }))
    }
}

/// Worst relative error of the extrapolated end-to-end check of `variant`
/// over `trials` random problems.
pub fn model_gradient_error(variant: Variant, trials: usize, seed: u64, eps: f64) -> Result<f64> {
    worst_over(trials, seed, eps, true, model_problem(variant))
}

pub fn gradient_suite(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    type Maker = fn(&mut RngStream) -> Result<Problem>;
    let kernels: [(&str, Maker); 6] = [
        ("affine", affine_problem),
        ("relu", relu_problem),
        ("dropout", dropout_problem),
        ("maxpool_compress", maxpool_problem),
        ("aggregate", aggregate_problem),
        ("softmax_cross_entropy", softmax_problem),
    ];
    let mut out = Vec::new();
    for (i, (name, make)) in kernels.into_iter().enumerate() {
        let worst = worst_over(trials, seed.wrapping_add(i as u64), KERNEL_EPS, true, make)?;
        out.push(CheckOutcome::bound(
            &format!("gradient {name}"),
            worst,
            KERNEL_TOLERANCE,
            trials,
        ));
    }
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let worst = model_gradient_error(variant, trials, seed.wrapping_add(100 + i as u64), MODEL_EPS)?;
        out.push(CheckOutcome::bound(
            &format!("gradient model {variant}"),
            worst,
            MODEL_TOLERANCE,
            trials,
        ));
    }
    Ok(out)
}

fn model_pair(base: &ModelConfig, other: Variant, g: &Graph) -> Result<(Model, Model)> {
    let a = Model::init(base.clone(), g)?;
    let b = Model::init(
        ModelConfig {
            variant: other,
            ..base.clone()
        },
        g,
    )?;
    Ok((a, b))
}

pub fn equivalence_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = RngStream::new(seed);
    let g = random_graph(&mut rng, 12, 0.3);
    let x = tensor(&mut rng, 12, 8);
    let upstream = tensor(&mut rng, 12, 3);
    let base = ModelConfig {
        variant: Variant::ResidualGgnn,
        num_layers: 3,
        input_dim: 8,
        hidden_dim: 6,
        output_dim: 3,
        alpha: 0.0,
        dropout_p: 0.25,
        seed,
    };
    let mut out = Vec::new();

    let (mut residual, mut gnn) = model_pair(&base, Variant::Gnn, &g)?;
    let (ya, ta) = residual.forward(&x, &g, Phase::Train, &mut RngStream::new(seed))?;
    let (yb, tb) = gnn.forward(&x, &g, Phase::Train, &mut RngStream::new(seed))?;
    residual.backward(&ta, &g, &upstream)?;
    gnn.backward(&tb, &g, &upstream)?;
    let (_, ga) = flatten(&mut residual);
    let (_, gb) = flatten(&mut gnn);
    let same = ya == yb && ga == gb;
    out.push(CheckOutcome::exact(
        "residual_ggnn alpha=0 == gnn",
        same,
        "forward and backward, bit-exact",
    ));

    let learnable_cfg = ModelConfig {
        variant: Variant::LearnableGgnn,
        ..base.clone()
    };
    let (mut learnable, gnn) = model_pair(&learnable_cfg, Variant::Gnn, &g)?;
    if let Some(t) = learnable.theta_mut() {
        t.theta.iter_mut().for_each(|v| *v = 40.0);
    }
    let ya = learnable.predict(&x, &g)?;
    let yb = gnn.predict(&x, &g)?;
    let worst = ya
        .values()
        .iter()
        .zip(yb.values())
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max);
    out.push(CheckOutcome::exact(
        "learnable_ggnn theta=40 ~ gnn",
        worst <= 1e-8,
        format!("max rel diff {worst:.3e} (tol 1e-8)"),
    ));

    let pmlp_cfg = ModelConfig {
        variant: Variant::Pmlp,
        ..base.clone()
    };
    let (pmlp, gnn) = model_pair(&pmlp_cfg, Variant::Gnn, &g)?;
    let empty = Graph::build(&[], 12)?;
    let (y_graph, _) = pmlp.forward(&x, &g, Phase::Train, &mut RngStream::new(seed))?;
    let (y_empty, _) = pmlp.forward(&x, &empty, Phase::Train, &mut RngStream::new(seed))?;
    let mlp = mlp_forward(&pmlp, &x, &mut RngStream::new(seed))?;
    out.push(CheckOutcome::exact(
        "pmlp train == mlp, edge-invariant",
        y_graph == mlp && y_empty == mlp,
        "bit-exact",
    ));
    out.push(CheckOutcome::exact(
        "pmlp eval == gnn",
        pmlp.predict(&x, &g)? == gnn.predict(&x, &g)?,
        "bit-exact",
    ));
    Ok(out)
}

/// Dropout, affine and ReLU only, straight from the kernels.
fn mlp_forward(model: &Model, x: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
    let layers = model.config().num_layers;
    let mut h = x.clone();
    for l in 0..layers {
        let (dropped, _) = dropout_forward(&h, model.config().dropout_p, rng, true)?;
        h = affine_forward(&dropped, &model.weights()[l].value, &model.biases()[l].value)?;
        if l + 1 < layers {
            h = relu_forward(&h).0;
        }
    }
    Ok(h)
}
