//! Dense kernels: affine map, ReLU, inverted dropout and MaxPool feature
//! compression, each with its reverse-mode rule.
//!
//! Backward functions add into caller-owned accumulators, so running a
//! backward pass twice doubles the gradients.

use super::tensor::{Real, Tensor};
use crate::error::{config_err, input_err, Result};
use crate::rng::RngStream;

/// `x · w + b`, with `b` broadcast over rows.
pub fn affine_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_affine_shapes(x, w, b)?;
    let (n, d_out) = (x.rows(), w.cols());
    let mut out = Tensor::zeros(n, d_out);
    let bias = b.values();
    let out_vals = out.values_mut();
    for i in 0..n {
        let out_row = &mut out_vals[i * d_out..(i + 1) * d_out];
        out_row.copy_from_slice(bias);
        for (k, &xv) in x.row(i).iter().enumerate() {
            // Input features are mostly zeros.
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in out_row.iter_mut().zip(w.row(k)) {
                *o = *o + xv * wv;
            }
        }
    }
    Ok(out)
}

/// Accumulates `upstream · wᵀ` into `grad_x`, `xᵀ · upstream` into `grad_w`
/// and the column sums of `upstream` into `grad_b`.
///
/// `grad_x` is optional because the input features never need a gradient and
/// that product is the most expensive one.
pub fn affine_backward<T: Real>(
    upstream: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_x: Option<&mut Tensor<T>>,
    grad_w: &mut Tensor<T>,
    grad_b: &mut Tensor<T>,
) -> Result<()> {
    let (n, d_in, d_out) = (x.rows(), x.cols(), w.cols());
    if w.rows() != d_in {
        return Err(input_err!(
            "affine_backward: x is {n}x{d_in} but w is {}x{d_out}",
            w.rows()
        ));
    }
    upstream.expect_shape((n, d_out), "affine_backward upstream")?;
    grad_w.expect_shape(w.shape(), "affine_backward grad_w")?;
    grad_b.expect_shape((1, d_out), "affine_backward grad_b")?;

    if let Some(grad_x) = grad_x {
        grad_x.expect_shape(x.shape(), "affine_backward grad_x")?;
        let gx = grad_x.values_mut();
        for i in 0..n {
            let up = upstream.row(i);
            for k in 0..d_in {
                let dot: T = up.iter().zip(w.row(k)).map(|(&u, &wv)| u * wv).sum();
                gx[i * d_in + k] = gx[i * d_in + k] + dot;
            }
        }
    }

    let gw = grad_w.values_mut();
    for i in 0..n {
        let up = upstream.row(i);
        for (k, &xv) in x.row(i).iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (g, &u) in gw[k * d_out..(k + 1) * d_out].iter_mut().zip(up) {
                *g = *g + xv * u;
            }
        }
    }

    let gb = grad_b.values_mut();
    for i in 0..n {
        for (g, &u) in gb.iter_mut().zip(upstream.row(i)) {
            *g = *g + u;
        }
    }
    Ok(())
}

fn check_affine_shapes<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if x.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(input_err!(
            "affine: x {}x{}, w {}x{}, b {}x{} do not conform",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols(),
            b.rows(),
            b.cols()
        ));
    }
    Ok(())
}

/// Positions where the ReLU input was strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluMask {
    active: Vec<bool>,
    shape: (usize, usize),
}

impl ReluMask {
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, ReluMask) {
    let active: Vec<bool> = x.values().iter().map(|&v| v > T::zero()).collect();
    let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
    let mask = ReluMask {
        active,
        shape: x.shape(),
    };
    (out, mask)
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(upstream: &Tensor<T>, mask: &ReluMask, grad_x: &mut Tensor<T>) -> Result<()> {
    upstream.expect_shape(mask.shape, "relu_backward upstream")?;
    grad_x.expect_shape(mask.shape, "relu_backward grad_x")?;
    for ((g, &u), &on) in grad_x.values_mut().iter_mut().zip(upstream.values()).zip(&mask.active) {
        if on {
            *g = *g + u;
        }
    }
    Ok(())
}

/// Kept positions and the survivor scale of one dropout application.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T = f64> {
    keep: Option<Vec<bool>>,
    scale: T,
    shape: (usize, usize),
}

impl<T: Real> DropoutMask<T> {
    /// Whether the mask drops nothing and scales by one.
    pub fn is_identity(&self) -> bool {
        self.keep.is_none()
    }

    pub fn keep(&self) -> Option<&[bool]> {
        self.keep.as_deref()
    }
}

/// Inverted dropout.
///
/// In training mode with `p > 0`, one uniform draw is taken per element in
/// row-major order and the element is zeroed when the draw is below `p`;
/// survivors are scaled by `1/(1-p)`. Evaluation mode and `p = 0` are the
/// identity and consume no draws.
pub fn dropout_forward<T: Real>(
    x: &Tensor<T>,
    p: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(input_err!("dropout probability {p} outside [0, 1)"));
    }
    if !training || p == 0.0 {
        let mask = DropoutMask {
            keep: None,
            scale: T::one(),
            shape: x.shape(),
        };
        return Ok((x.clone(), mask));
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    // Two branch-free passes; a fused loop compiles to a branch on random
    // keep bits and runs about twice as slow on the input features.
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.next_f64() >= p).collect();
    let values = x
        .values()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| [T::zero(), v * scale][k as usize])
        .collect();
    let out = Tensor::from_vec(x.rows(), x.cols(), values)?;
    let mask = DropoutMask {
        keep: Some(keep),
        scale,
        shape: x.shape(),
    };
    Ok((out, mask))
}

pub fn dropout_backward<T: Real>(upstream: &Tensor<T>, mask: &DropoutMask<T>, grad_x: &mut Tensor<T>) -> Result<()> {
    upstream.expect_shape(mask.shape, "dropout_backward upstream")?;
    grad_x.expect_shape(mask.shape, "dropout_backward grad_x")?;
    match &mask.keep {
        None => {
            grad_x.add_scaled(upstream, T::one())?;
        }
        Some(keep) => {
            for ((g, &u), &k) in grad_x.values_mut().iter_mut().zip(upstream.values()).zip(keep) {
                if k {
                    *g = *g + u * mask.scale;
                }
            }
        }
    }
    Ok(())
}

/// Winning input column for every (row, bin) of a MaxPool compression.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    rows: usize,
    d_in: usize,
    d_out: usize,
    argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Half-open column range `[start, end)` of bin `j` when `d_in` columns are
/// split into `d_out` bins.
pub fn pool_bin(j: usize, d_in: usize, d_out: usize) -> (usize, usize) {
    (j * d_in / d_out, (j + 1) * d_in / d_out)
}

/// Compresses each row from `d_in` to `d_out` columns by taking the maximum
/// over contiguous bins. Ties go to the lowest column.
pub fn maxpool_compress_forward<T: Real>(h: &Tensor<T>, d_out: usize) -> Result<(Tensor<T>, PoolRecord)> {
    let (n, d_in) = h.shape();
    if d_out == 0 || d_in < d_out {
        return Err(config_err!(
            "residual shortcut undefined for expanding layers ({d_in} -> {d_out})"
        ));
    }
    let mut out = Tensor::zeros(n, d_out);
    let mut argmax = Vec::with_capacity(n * d_out);
    for i in 0..n {
        let row = h.row(i);
        for j in 0..d_out {
            let (start, end) = pool_bin(j, d_in, d_out);
            let mut best = start;
            for c in start + 1..end {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.set(i, j, row[best]);
            argmax.push(best);
        }
    }
    let record = PoolRecord {
        rows: n,
        d_in,
        d_out,
        argmax,
    };
    Ok((out, record))
}

pub fn maxpool_compress_backward<T: Real>(
    upstream: &Tensor<T>,
    record: &PoolRecord,
    grad_h: &mut Tensor<T>,
) -> Result<()> {
    upstream.expect_shape((record.rows, record.d_out), "maxpool_backward upstream")?;
    grad_h.expect_shape((record.rows, record.d_in), "maxpool_backward grad_h")?;
    let d_in = record.d_in;
    let gh = grad_h.values_mut();
    for (idx, (&u, &col)) in upstream.values().iter().zip(&record.argmax).enumerate() {
        let slot = (idx / record.d_out) * d_in + col;
        gh[slot] = gh[slot] + u;
    }
    Ok(())
}
