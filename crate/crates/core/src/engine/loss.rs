use super::tensor::{Real, Tensor};
use crate::error::{input_err, Result};

/// Mean cross-entropy of softmax(logits) over the nodes in `mask`, and its
/// gradient with respect to the logits (zero on rows outside the mask).
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize], mask: &[usize]) -> Result<(T, Tensor<T>)> {
    if mask.is_empty() {
        return Err(input_err!("cross-entropy over an empty node set"));
    }
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(input_err!("{} labels for {n} logit rows", labels.len()));
    }
    let scale = T::one() / T::from_f64(mask.len() as f64);
    let mut grad = Tensor::zeros(n, k);
    let mut total = T::zero();
    for &u in mask {
        if u >= n {
            return Err(input_err!("node {u} outside [0, {n})"));
        }
        let y = labels[u];
        if y >= k {
            return Err(input_err!("label {y} of node {u} outside [0, {k})"));
        }
        let row = logits.row(u);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = sum_exp.ln();
        total = total + (log_norm - (row[y] - max));
        for (c, &z) in row.iter().enumerate() {
            let p = (z - max - log_norm).exp();
            let target = if c == y { T::one() } else { T::zero() };
            grad.set(u, c, (p - target) * scale);
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0], &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad.values(), &[-0.5, 0.5]);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let logits = Tensor::<f64>::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0], &[0]).unwrap();
        assert!(loss.abs() < 1e-300);
        assert!(grad.values().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn unmasked_rows_get_zero_gradient() {
        let logits = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[1, 0], &[1]).unwrap();
        assert_eq!(grad.row(0), &[0.0, 0.0]);
        assert!(grad.row(1)[0] < 0.0);
    }

    #[test]
    fn bad_inputs() {
        let logits = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[0], &[]).is_err());
        assert!(softmax_cross_entropy(&logits, &[2], &[0]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0], &[3]).is_err());
    }
}
