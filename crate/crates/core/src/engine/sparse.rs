//! Message passing over the CSR graph, optionally gated per edge.

use super::tensor::{Real, Tensor};
use crate::error::{input_err, Result};
use crate::graph::Graph;

/// One gate logit per undirected edge and per self-loop, indexed by edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeParams<T = f64> {
    pub theta: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> EdgeParams<T> {
    pub fn zeros(len: usize) -> Self {
        Self::from_theta(vec![T::zero(); len])
    }

    pub fn for_graph(g: &Graph) -> Self {
        Self::zeros(g.count_parameters_theta())
    }

    pub fn from_theta(theta: Vec<T>) -> Self {
        let grad = vec![T::zero(); theta.len()];
        Self { theta, grad }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// `sigmoid(theta)` for every edge id.
    pub fn gates(&self) -> Vec<T> {
        self.theta.iter().map(|&t| sigmoid(t)).collect()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_inputs<T: Real>(g: &Graph, h: &Tensor<T>, gates: Option<&EdgeParams<T>>) -> Result<()> {
    if h.rows() != g.num_nodes() {
        return Err(input_err!(
            "aggregate: features have {} rows but the graph has {} nodes",
            h.rows(),
            g.num_nodes()
        ));
    }
    if let Some(p) = gates {
        if p.len() != g.count_parameters_theta() {
            return Err(input_err!(
                "aggregate: {} gate parameters for a graph needing {}",
                p.len(),
                g.count_parameters_theta()
            ));
        }
    }
    Ok(())
}

/// Per-CSR-entry aggregation weights: `c_uv`, times `sigmoid(theta_e)` when
/// gated.
fn entry_weights<T: Real>(g: &Graph, gates: Option<&EdgeParams<T>>) -> Vec<T> {
    let coeffs = g.norm_coeffs().iter().map(|&c| T::from_f64(c));
    match gates {
        None => coeffs.collect(),
        Some(p) => {
            let s = p.gates();
            coeffs.zip(g.edge_ids()).map(|(c, &e)| c * s[e]).collect()
        }
    }
}

/// `out[u] = Σ_v w_uv · h[v]` over the CSR row of `u` (self-loop included).
pub fn aggregate_forward<T: Real>(g: &Graph, h: &Tensor<T>, gates: Option<&EdgeParams<T>>) -> Result<Tensor<T>> {
    check_inputs(g, h, gates)?;
    let weights = entry_weights(g, gates);
    Ok(propagate(g, h, &weights))
}

fn propagate<T: Real>(g: &Graph, h: &Tensor<T>, weights: &[T]) -> Tensor<T> {
    let d = h.cols();
    let mut out = Tensor::zeros(h.rows(), d);
    let offsets = g.row_offsets();
    let cols = g.col_indices();
    let vals = out.values_mut();
    for u in 0..g.num_nodes() {
        let out_row = &mut vals[u * d..(u + 1) * d];
        for i in offsets[u]..offsets[u + 1] {
            let w = weights[i];
            for (o, &x) in out_row.iter_mut().zip(h.row(cols[i])) {
                *o = *o + w * x;
            }
        }
    }
    out
}

/// Reverse of [`aggregate_forward`].
///
/// The weight matrix is symmetric, so the transpose aggregation reuses the
/// forward weights. The gate gradient for edge `e` sums
/// `c_uv · σ'(θ_e) · <upstream[u], h[v]>` over both orientations of `e`.
pub fn aggregate_backward<T: Real>(
    g: &Graph,
    upstream: &Tensor<T>,
    h: &Tensor<T>,
    gates: Option<&mut EdgeParams<T>>,
    grad_h: Option<&mut Tensor<T>>,
) -> Result<()> {
    check_inputs(g, h, gates.as_deref())?;
    upstream.expect_shape(h.shape(), "aggregate_backward upstream")?;

    if let Some(grad_h) = grad_h {
        grad_h.expect_shape(h.shape(), "aggregate_backward grad_h")?;
        let weights = entry_weights(g, gates.as_deref());
        let back = propagate(g, upstream, &weights);
        grad_h.add_scaled(&back, T::one())?;
    }

    if let Some(params) = gates {
        let s = params.gates();
        let offsets = g.row_offsets();
        let cols = g.col_indices();
        let ids = g.edge_ids();
        let coeffs = g.norm_coeffs();
        for u in 0..g.num_nodes() {
            let up = upstream.row(u);
            for i in offsets[u]..offsets[u + 1] {
                let e = ids[i];
                let dot: T = up.iter().zip(h.row(cols[i])).map(|(&a, &b)| a * b).sum();
                let slope = T::from_f64(coeffs[i]) * s[e] * (T::one() - s[e]);
                params.grad[e] = params.grad[e] + slope * dot;
            }
        }
    }
    Ok(())
}
