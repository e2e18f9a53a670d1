use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::rng::RngStream;

/// Sizes of the per-class training sample and the validation/test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_per_class: 20,
            num_val: 500,
            num_test: 1000,
        }
    }
}

/// Disjoint node index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles node ids with a Fisher-Yates pass seeded by `seed`, takes the
/// first `train_per_class` nodes of every class as training nodes, then the
/// next `num_val` remaining nodes for validation and `num_test` for test.
pub fn make_splits(labels: &[usize], k: usize, seed: u64, spec: &SplitSpec) -> Result<Split> {
    let n = labels.len();
    let mut counts = vec![0usize; k];
    for (u, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(input_err!("label {y} of node {u} outside [0, {k})"));
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&m| m < spec.train_per_class) {
        return Err(input_err!(
            "class {c} has {} members, the split needs {}",
            counts[c],
            spec.train_per_class
        ));
    }
    let needed = spec.train_per_class * k + spec.num_val + spec.num_test;
    if n < needed {
        return Err(input_err!("{n} nodes cannot fill a split of {needed}"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed).shuffle(&mut order);

    let mut taken = vec![0usize; k];
    let mut train = Vec::with_capacity(spec.train_per_class * k);
    let mut rest = Vec::with_capacity(n);
    for u in order {
        let y = labels[u];
        if taken[y] < spec.train_per_class {
            taken[y] += 1;
            train.push(u);
        } else {
            rest.push(u);
        }
    }
    let mut val = rest[..spec.num_val].to_vec();
    let mut test = rest[spec.num_val..spec.num_val + spec.num_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|u| (u * 7 + u / 3) % k).collect()
    }

    #[test]
    fn standard_sizes() {
        let y = labels(2708, 7);
        let s = make_splits(&y, 7, 0, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (140, 500, 1000));
        for c in 0..7 {
            assert_eq!(s.train.iter().filter(|&&u| y[u] == c).count(), 20);
        }
    }

    #[test]
    fn seeds_control_the_split() {
        let y = labels(2000, 6);
        let spec = SplitSpec::default();
        let a = make_splits(&y, 6, 3, &spec).unwrap();
        assert_eq!(a, make_splits(&y, 6, 3, &spec).unwrap());
        assert_ne!(a, make_splits(&y, 6, 4, &spec).unwrap());
    }

    #[test]
    fn small_class_is_named() {
        let mut y = labels(2000, 3);
        for v in y.iter_mut() {
            if *v == 2 {
                *v = 1;
            }
        }
        y[5] = 2;
        let err = make_splits(&y, 3, 0, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("class 2"), "{err}");
    }

    #[test]
    fn too_few_nodes() {
        let y = labels(600, 2);
        assert!(make_splits(&y, 2, 0, &SplitSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn sets_are_disjoint_and_in_range(seed in any::<u64>(), n in 30usize..120, k in 1usize..4) {
            let y = labels(n, k);
            let spec = SplitSpec { train_per_class: 3, num_val: 5, num_test: 10 };
            let s = make_splits(&y, k, seed, &spec).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            let total = all.len();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), total);
            prop_assert!(all.iter().all(|&u| u < n));
            prop_assert_eq!(s.train.len(), 3 * k);
        }
    }
}
