use crate::engine::Real;
use crate::error::{Error, Result};
use crate::model::Model;

use super::{DecayMode, TrainConfig};

/// First and second moment estimates, one buffer per parameter array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn for_model(model: &mut Model<T>) -> Self {
        let mut m = Vec::new();
        model.for_each_param(|p, _| m.push(vec![T::zero(); p.len()]));
        AdamState { v: m.clone(), m, t: 0 }
    }
}

/// One Adam update of `params` in place; `t` is the 1-based step index.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Internal(format!(
            "adam: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Internal("adam step index starts at 1".into()));
    }
    let lr = T::from_f64(cfg.learning_rate);
    let wd = T::from_f64(cfg.weight_decay);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let eps = T::from_f64(cfg.epsilon);
    let one = T::one();
    let c1 = one - T::from_f64(cfg.beta1.powf(t as f64));
    let c2 = one - T::from_f64(cfg.beta2.powf(t as f64));
    let shrink = one - lr * wd;
    for i in 0..params.len() {
        let mut g = grads[i];
        match cfg.decay_mode {
            DecayMode::Decoupled => params[i] = params[i] * shrink,
            DecayMode::Coupled => g = g + wd * params[i],
        }
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Applies one Adam step to every parameter of `model` from its accumulated
/// gradients, then invalidates outstanding traces.
pub fn adam_step<T: Real>(model: &mut Model<T>, state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let mut index = 0;
    let mut result = Ok(());
    model.for_each_param(|p, g| {
        if result.is_err() {
            return;
        }
        result = match (state.m.get_mut(index), state.v.get_mut(index)) {
            (Some(m), Some(v)) => adam_update(p, g, m, v, t, cfg),
            _ => Err(Error::Internal(format!(
                "adam: no moment buffers for parameter array {index}"
            ))),
        };
        index += 1;
    });
    result?;
    if index != state.m.len() {
        return Err(Error::Internal(format!(
            "adam: state holds {} arrays, model has {index}",
            state.m.len()
        )));
    }
    model.mark_updated();
    Ok(())
}
