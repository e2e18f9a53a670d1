//! Ingestion of the bundled citation corpora.

use std::path::PathBuf;

use ggnn::data::{DatasetBundle, DatasetSource, SplitSpec};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn load(name: &str, seed: u64) -> DatasetBundle {
    let source = DatasetSource::named(name, data_dir()).unwrap();
    DatasetBundle::load(&source, seed, &SplitSpec::default()).unwrap()
}

fn check_bundle(b: &DatasetBundle, n: usize, d: usize, k: usize) {
    assert_eq!((b.num_nodes(), b.feature_dim(), b.class_count), (n, d, k));
    assert_eq!(b.split.train.len(), 20 * k);
    assert_eq!(b.split.val.len(), 500);
    assert_eq!(b.split.test.len(), 1000);
    for c in 0..k {
        assert_eq!(b.split.train.iter().filter(|&&u| b.labels[u] == c).count(), 20);
    }
    let cols = b.feature_dim();
    for row in b.features.values().chunks(cols) {
        let s: f64 = row.iter().sum();
        assert!(s == 0.0 || (s - 1.0).abs() < 1e-6);
    }
    let loops = b.num_nodes();
    assert_eq!((b.graph.num_entries() - loops) % 2, 0);
}

#[test]
fn cora_shape() {
    let b = load("cora", 0);
    check_bundle(&b, 2708, 1433, 7);
    assert_eq!(b.dropped_citations, 0);
}

#[test]
fn citeseer_shape() {
    let b = load("citeseer", 0);
    check_bundle(&b, 3327, 3703, 6);
}

#[test]
fn ingestion_is_deterministic() {
    let a = load("cora", 11);
    let b = load("cora", 11);
    assert_eq!(a, b);
    assert_ne!(a.split, load("cora", 12).split);
}

#[test]
fn unknown_and_missing_datasets() {
    assert!(DatasetSource::named("pubmed", data_dir()).is_err());
    let source = DatasetSource::named("cora", "/nonexistent").unwrap();
    let err = DatasetBundle::load(&source, 0, &SplitSpec::default()).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/cora/cora.content"), "{err}");
}
