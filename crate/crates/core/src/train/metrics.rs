use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Real, Tensor};
use crate::error::{config_err, input_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
    RocAucOvr,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::RocAucOvr => "roc_auc_ovr",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::Accuracy, Metric::MacroF1, Metric::RocAucOvr]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err!("unknown metric `{s}`"))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

fn check_index_set<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize]) -> Result<()> {
    if nodes.is_empty() {
        return Err(input_err!("metric over an empty node set"));
    }
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(input_err!("{} labels for {n} logit rows", labels.len()));
    }
    for &u in nodes {
        if u >= n {
            return Err(input_err!("node {u} outside [0, {n})"));
        }
        if labels[u] >= k {
            return Err(input_err!("label {} of node {u} outside [0, {k})", labels[u]));
        }
    }
    Ok(())
}

pub fn evaluate<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize], metric: Metric) -> Result<f64> {
    check_index_set(logits, labels, nodes)?;
    match metric {
        Metric::Accuracy => Ok(accuracy(logits, labels, nodes)),
        Metric::MacroF1 => Ok(macro_f1(logits, labels, nodes)),
        Metric::RocAucOvr => roc_auc_ovr(logits, labels, nodes),
    }
}

fn accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize]) -> f64 {
    let correct = nodes.iter().filter(|&&u| argmax(logits.row(u)) == labels[u]).count();
    correct as f64 / nodes.len() as f64
}

/// Mean F1 over the classes that occur among the labels or predictions of
/// `nodes`; a class with no true positives scores 0.
fn macro_f1<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize]) -> f64 {
    let k = logits.cols();
    let (mut tp, mut fp, mut fnn) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for &u in nodes {
        let pred = argmax(logits.row(u));
        let y = labels[u];
        if pred == y {
            tp[y] += 1;
        } else {
            fp[pred] += 1;
            fnn[y] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..k {
        if tp[c] + fp[c] + fnn[c] == 0 {
            continue;
        }
        classes += 1;
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fnn[c]) as f64;
    }
    total / classes as f64
}

fn softmax_rows<T: Real>(logits: &Tensor<T>, nodes: &[usize]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|&u| {
            let row: Vec<f64> = logits.row(u).iter().map(|v| v.as_f64()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mann-Whitney AUC of `scores` for the positives in `positive`; tied
/// scores share their average rank.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&t| positive[t]).count() as f64;
        i = j + 1;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// One-vs-rest AUC on softmax scores, averaged over the classes that have
/// both positives and negatives among `nodes`.
fn roc_auc_ovr<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    let probs = softmax_rows(logits, nodes);
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..logits.cols() {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = nodes.iter().map(|&u| labels[u] == c).collect();
        if let Some(auc) = binary_auc(&scores, &positive) {
            total += auc;
            classes += 1;
        }
    }
    if classes == 0 {
        return Err(input_err!("ROC AUC undefined: the node set holds a single class"));
    }
    Ok(total / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let logits = Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(evaluate(&logits, &[0, 0], &[0, 1], Metric::Accuracy).unwrap(), 0.5);
        assert_eq!(evaluate(&logits, &[0, 1], &[0, 1], Metric::Accuracy).unwrap(), 1.0);
        assert_eq!(evaluate(&logits, &[0, 1], &[0, 1], Metric::MacroF1).unwrap(), 1.0);
        assert!(evaluate(&logits, &[0, 1], &[], Metric::Accuracy).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_class() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn rank_statistic() {
        assert_eq!(binary_auc(&[0.9, 0.8, 0.3], &[true, false, false]), Some(1.0));
        assert_eq!(binary_auc(&[0.1, 0.8, 0.3], &[true, false, false]), Some(0.0));
        assert_eq!(binary_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(binary_auc(&[0.5, 0.4], &[true, true]), None);
        // 1 positive, 3 negatives, positive beats two of them.
        assert_eq!(
            binary_auc(&[0.2, 0.6, 0.1, 0.9], &[false, true, false, false]),
            Some(2.0 / 3.0)
        );
    }

    #[test]
    fn macro_f1_by_hand() {
        // Predictions 0,0,1,1 for labels 0,1,1,2.
        let logits = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let f1 = evaluate(&logits, &[0, 1, 1, 2], &[0, 1, 2, 3], Metric::MacroF1).unwrap();
        // Class 0: 2/3, class 1: 1/2, class 2: 0.
        assert!((f1 - (2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_auc_is_undefined() {
        let logits = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(evaluate(&logits, &[1, 1], &[0, 1], Metric::RocAucOvr).is_err());
        assert_eq!(evaluate(&logits, &[0, 1], &[0, 1], Metric::RocAucOvr).unwrap(), 1.0);
    }
}
