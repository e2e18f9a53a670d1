//! The four network variants and their forward/backward passes.
//!
//! Every layer runs, in order: dropout (training only), affine transform,
//! message passing (skipped in MLP mode), the α-scaled MaxPool shortcut from
//! the layer input (residual variant only), and ReLU (all but the last
//! layer, which emits raw logits).

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::engine::{
    affine_backward, affine_forward, aggregate_backward, aggregate_forward, dropout_backward, dropout_forward,
    maxpool_compress_backward, maxpool_compress_forward, pool_bin, relu_backward, relu_forward, DropoutMask,
    EdgeParams, Param, PoolRecord, Real, ReluMask, Tensor,
};
use crate::error::{config_err, input_err, Error, Result};
use crate::graph::Graph;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gnn,
    Pmlp,
    ResidualGgnn,
    LearnableGgnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Gnn,
        Variant::Pmlp,
        Variant::ResidualGgnn,
        Variant::LearnableGgnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gnn => "gnn",
            Variant::Pmlp => "pmlp",
            Variant::ResidualGgnn => "residual_ggnn",
            Variant::LearnableGgnn => "learnable_ggnn",
        }
    }

    /// Message-passing mode used in `phase`. PMLP trains as a plain MLP and
    /// evaluates with message passing; every other variant always passes
    /// messages.
    pub fn mode(self, phase: Phase) -> Mode {
        match (self, phase) {
            (Variant::Pmlp, Phase::Train) => Mode::Mlp,
            _ => Mode::Gnn,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown variant `{s}` (expected gnn, pmlp, residual_ggnn or learnable_ggnn)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn is_training(self) -> bool {
        self == Phase::Train
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mlp,
    Gnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Shortcut scale; only read by the residual variant.
    pub alpha: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Layer widths `input, hidden × (num_layers − 1), output`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.num_layers.saturating_sub(1)));
        dims.push(self.output_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(config_err!("a model needs at least one layer"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || (self.num_layers > 1 && self.hidden_dim == 0) {
            return Err(config_err!("layer widths must be positive: {:?}", self.dims()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(config_err!(
                "alpha must be a finite non-negative number, got {}",
                self.alpha
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err!("dropout {} outside [0, 1)", self.dropout_p));
        }
        if self.variant == Variant::ResidualGgnn {
            let dims = self.dims();
            if let Some(w) = dims.windows(2).find(|w| w[0] < w[1]) {
                return Err(config_err!(
                    "residual shortcut undefined for expanding layers ({} -> {}); \
                     residual_ggnn needs input_dim >= hidden_dim >= output_dim",
                    w[0],
                    w[1]
                ));
            }
        }
        Ok(())
    }
}

/// Parameters of one network bound to a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    config: ModelConfig,
    weights: Vec<Param<T>>,
    biases: Vec<Param<T>>,
    theta: Option<EdgeParams<T>>,
    version: u64,
}

/// What one layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<T = f64> {
    mode: Mode,
    /// Dropout output; `None` when dropout was the identity.
    dropped: Option<Tensor<T>>,
    dropout: Option<DropoutMask<T>>,
    z: Tensor<T>,
    pool: Option<PoolRecord>,
    relu: Option<ReluMask>,
    /// Smallest |pre-activation| seen by the ReLU (infinite on the last layer).
    relu_margin: f64,
}

/// Record of a full forward pass, borrowed from the input features.
#[derive(Debug, Clone)]
pub struct Trace<'a, T = f64> {
    features: &'a Tensor<T>,
    /// Outputs of every layer but the last.
    hidden: Vec<Tensor<T>>,
    layers: Vec<LayerCache<T>>,
    version: u64,
}

impl<T: Real> Trace<'_, T> {
    /// Distance of this forward pass from a non-differentiable point: the
    /// smallest |ReLU input| and the smallest gap between the winner and the
    /// runner-up of any MaxPool bin.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for (l, cache) in self.layers.iter().enumerate() {
            margin = margin.min(cache.relu_margin);
            if cache.pool.is_some() {
                let h_in = if l == 0 { self.features } else { &self.hidden[l - 1] };
                margin = margin.min(pool_gap(h_in, cache.z.cols()));
            }
        }
        margin
    }

    /// ReLU on/off states followed by MaxPool winners, layer by layer. Two
    /// passes with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for cache in &self.layers {
            if let Some(relu) = &cache.relu {
                pattern.extend(relu.active().iter().map(|&on| on as usize));
            }
            if let Some(pool) = &cache.pool {
                pattern.extend_from_slice(pool.argmax());
            }
        }
        pattern
    }
}

fn pool_gap<T: Real>(h: &Tensor<T>, d_out: usize) -> f64 {
    let d_in = h.cols();
    let mut gap = f64::INFINITY;
    for i in 0..h.rows() {
        let row = h.row(i);
        for j in 0..d_out {
            let (s, e) = pool_bin(j, d_in, d_out);
            if e - s < 2 {
                continue;
            }
            let mut vals: Vec<f64> = row[s..e].iter().map(|v| v.as_f64()).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            gap = gap.min(vals[0] - vals[1]);
        }
    }
    gap
}

impl<T: Real> Model<T> {
    /// Glorot-uniform weights drawn in layer then row-major order from a
    /// splitmix64 stream seeded with `config.seed`; zero biases; zero gate
    /// logits for the learnable variant.
    pub fn init(config: ModelConfig, g: &Graph) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        let mut rng = RngStream::new(config.seed);
        let mut weights = Vec::with_capacity(config.num_layers);
        let mut biases = Vec::with_capacity(config.num_layers);
        for w in dims.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let bound = glorot_bound(d_in, d_out);
            let values = (0..d_in * d_out)
                .map(|_| T::from_f64(rng.uniform(-bound, bound)))
                .collect();
            weights.push(Param::new(Tensor::from_vec(d_in, d_out, values)?));
            biases.push(Param::new(Tensor::zeros(1, d_out)));
        }
        let theta = (config.variant == Variant::LearnableGgnn).then(|| EdgeParams::for_graph(g));
        Ok(Self {
            config,
            weights,
            biases,
            theta,
            version: 0,
        })
    }

    /// Assembles a model from explicit parameters (checkpoint loading, tests).
    pub fn from_parts(
        config: ModelConfig,
        weights: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
        theta: Option<Vec<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        if weights.len() != config.num_layers || biases.len() != config.num_layers {
            return Err(config_err!(
                "{} weights and {} biases for {} layers",
                weights.len(),
                biases.len(),
                config.num_layers
            ));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            w.expect_shape((dims[l], dims[l + 1]), &format!("weight {l}"))?;
            b.expect_shape((1, dims[l + 1]), &format!("bias {l}"))?;
        }
        if theta.is_some() != (config.variant == Variant::LearnableGgnn) {
            return Err(config_err!("gate parameters present iff the variant is learnable_ggnn"));
        }
        Ok(Self {
            config,
            weights: weights.into_iter().map(Param::new).collect(),
            biases: biases.into_iter().map(Param::new).collect(),
            theta: theta.map(EdgeParams::from_theta),
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Param<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Param<T>] {
        &self.biases
    }

    pub fn theta(&self) -> Option<&EdgeParams<T>> {
        self.theta.as_ref()
    }

    pub fn theta_mut(&mut self) -> Option<&mut EdgeParams<T>> {
        self.theta.as_mut()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Param<T> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Param<T> {
        &mut self.biases[layer]
    }

    pub fn num_parameters(&self) -> usize {
        let dense: usize = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.value.len() + b.value.len())
            .sum();
        dense + self.theta.as_ref().map_or(0, EdgeParams::len)
    }

    pub fn zero_grad(&mut self) {
        self.weights.iter_mut().for_each(Param::zero_grad);
        self.biases.iter_mut().for_each(Param::zero_grad);
        if let Some(t) = &mut self.theta {
            t.zero_grad();
        }
    }

    /// Visits every parameter block as `(values, gradient)` in a fixed order:
    /// weights and biases layer by layer, then the gate logits.
    pub fn for_each_param(&mut self, mut f: impl FnMut(&mut [T], &[T])) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            f(w.value.values_mut(), w.grad.values());
            f(b.value.values_mut(), b.grad.values());
        }
        if let Some(t) = &mut self.theta {
            f(&mut t.theta, &t.grad);
        }
    }

    /// Must be called after any in-place parameter update; traces recorded
    /// before the update are then rejected by [`Model::backward`].
    pub fn mark_updated(&mut self) {
        self.version += 1;
    }

    /// Runs layer `l` on `h_in`.
    pub fn layer_forward(
        &self,
        l: usize,
        h_in: &Tensor<T>,
        g: &Graph,
        mode: Mode,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        let w = &self.weights[l].value;
        if h_in.cols() != w.rows() {
            return Err(input_err!("layer {l} expects width {}, got {}", w.rows(), h_in.cols()));
        }
        let (dropped, dropout) = if training && self.config.dropout_p > 0.0 {
            let (x, mask) = dropout_forward(h_in, self.config.dropout_p, rng, true)?;
            (Some(x), Some(mask))
        } else {
            (None, None)
        };
        let x = dropped.as_ref().unwrap_or(h_in);
        let z = affine_forward(x, w, &self.biases[l].value)?;

        let mut m = match mode {
            Mode::Gnn => aggregate_forward(g, &z, self.gates())?,
            Mode::Mlp => z.clone(),
        };

        let pool = if self.config.variant == Variant::ResidualGgnn && mode == Mode::Gnn {
            let (shortcut, record) = maxpool_compress_forward(h_in, w.cols())?;
            m.add_scaled(&shortcut, T::from_f64(self.config.alpha))?;
            Some(record)
        } else {
            None
        };

        let last = l + 1 == self.config.num_layers;
        let (out, relu, relu_margin) = if last {
            (m, None, f64::INFINITY)
        } else {
            let margin = m
                .values()
                .iter()
                .fold(f64::INFINITY, |acc, v| acc.min(v.as_f64().abs()));
            let (out, mask) = relu_forward(&m);
            (out, Some(mask), margin)
        };
        let cache = LayerCache {
            mode,
            dropped,
            dropout,
            z,
            pool,
            relu,
            relu_margin,
        };
        Ok((out, cache))
    }

    fn gates(&self) -> Option<&EdgeParams<T>> {
        match self.config.variant {
            Variant::LearnableGgnn => self.theta.as_ref(),
            _ => None,
        }
    }

    /// Full forward pass; returns the logits and the trace for backward.
    pub fn forward<'a>(
        &self,
        features: &'a Tensor<T>,
        g: &Graph,
        phase: Phase,
        rng: &mut RngStream,
    ) -> Result<(Tensor<T>, Trace<'a, T>)> {
        if features.rows() != g.num_nodes() {
            return Err(input_err!(
                "{} feature rows for a graph of {} nodes",
                features.rows(),
                g.num_nodes()
            ));
        }
        let mode = self.config.variant.mode(phase);
        let mut hidden = Vec::with_capacity(self.config.num_layers - 1);
        let mut layers = Vec::with_capacity(self.config.num_layers);
        let mut logits = None;
        for l in 0..self.config.num_layers {
            let h_in = if l == 0 { features } else { &hidden[l - 1] };
            let (out, cache) = self.layer_forward(l, h_in, g, mode, phase.is_training(), rng)?;
            layers.push(cache);
            if l + 1 == self.config.num_layers {
                logits = Some(out);
            } else {
                hidden.push(out);
            }
        }
        let trace = Trace {
            features,
            hidden,
            layers,
            version: self.version,
        };
        Ok((logits.expect("at least one layer"), trace))
    }

    /// Logits only; no dropout, no trace kept beyond the call.
    pub fn predict(&self, features: &Tensor<T>, g: &Graph) -> Result<Tensor<T>> {
        let mut rng = RngStream::new(0);
        Ok(self.forward(features, g, Phase::Eval, &mut rng)?.0)
    }

    /// Accumulates the gradient of a loss with `grad_logits = ∂loss/∂logits`
    /// into every weight, bias and gate logit.
    pub fn backward(&mut self, trace: &Trace<'_, T>, g: &Graph, grad_logits: &Tensor<T>) -> Result<()> {
        if trace.version != self.version || trace.layers.len() != self.config.num_layers {
            return Err(Error::Internal(
                "stale forward trace: parameters changed since it was recorded".into(),
            ));
        }
        let alpha = T::from_f64(self.config.alpha);
        let learnable = self.config.variant == Variant::LearnableGgnn;
        let mut upstream = grad_logits.clone();
        for l in (0..self.config.num_layers).rev() {
            let cache = &trace.layers[l];
            let h_in = if l == 0 { trace.features } else { &trace.hidden[l - 1] };

            let grad_m = match &cache.relu {
                Some(mask) => {
                    let mut gm = upstream.zeros_like();
                    relu_backward(&upstream, mask, &mut gm)?;
                    gm
                }
                None => upstream,
            };

            let mut grad_in = (l > 0).then(|| h_in.zeros_like());
            if let (Some(record), Some(gi)) = (&cache.pool, grad_in.as_mut()) {
                maxpool_compress_backward(&grad_m.scale(alpha), record, gi)?;
            }

            let grad_z = match cache.mode {
                Mode::Gnn => {
                    let mut gz = cache.z.zeros_like();
                    let gates = if learnable { self.theta.as_mut() } else { None };
                    aggregate_backward(g, &grad_m, &cache.z, gates, Some(&mut gz))?;
                    gz
                }
                Mode::Mlp => grad_m,
            };

            let x = cache.dropped.as_ref().unwrap_or(h_in);
            let mut grad_x = match (&grad_in, &cache.dropout) {
                (Some(_), Some(_)) => Some(x.zeros_like()),
                _ => None,
            };
            let (w, b) = (&mut self.weights[l], &mut self.biases[l]);
            let direct = if cache.dropout.is_none() {
                grad_in.as_mut()
            } else {
                grad_x.as_mut()
            };
            affine_backward(&grad_z, x, &w.value, direct, &mut w.grad, &mut b.grad)?;

            if let (Some(gx), Some(mask), Some(gi)) = (&grad_x, &cache.dropout, grad_in.as_mut()) {
                dropout_backward(gx, mask, gi)?;
            }
            match grad_in {
                Some(gi) => upstream = gi,
                None => break,
            }
        }
        Ok(())
    }
}

/// Half-width of the Glorot-uniform interval, `sqrt(6 / (d_in + d_out))`.
pub fn glorot_bound(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}
