//! Citation-corpus ingestion: content/cites parsing, feature normalization,
//! deterministic splits and the on-disk bundle dump.

mod dump;
mod parse;
mod split;

use std::path::{Path, PathBuf};

pub use dump::{dump_bundle, load_bundle_dump};
pub use parse::{load_content_cites, normalize_features, parse_content_cites, RawCorpus};
pub use split::{make_splits, Split, SplitSpec};

use crate::engine::Tensor;
use crate::error::{input_err, Result};
use crate::graph::Graph;

/// Where a corpus lives on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// `<data_dir>/<name>/<name>.content` and `.cites`; `name` is `cora` or `citeseer`.
    Named {
        name: String,
        data_dir: PathBuf,
    },
    Custom {
        content: PathBuf,
        cites: PathBuf,
    },
}

impl DatasetSource {
    pub const KNOWN: [&'static str; 2] = ["cora", "citeseer"];

    pub fn named(name: &str, data_dir: impl Into<PathBuf>) -> Result<Self> {
        if !Self::KNOWN.contains(&name) {
            return Err(input_err!(
                "unknown dataset `{name}` (expected cora, citeseer or custom)"
            ));
        }
        Ok(DatasetSource::Named {
            name: name.to_string(),
            data_dir: data_dir.into(),
        })
    }

    pub fn name(&self) -> &str {
        match self {
            DatasetSource::Named { name, .. } => name,
            DatasetSource::Custom { .. } => "custom",
        }
    }

    pub fn paths(&self) -> (PathBuf, PathBuf) {
        match self {
            DatasetSource::Named { name, data_dir } => {
                let dir = data_dir.join(name);
                (dir.join(format!("{name}.content")), dir.join(format!("{name}.cites")))
            }
            DatasetSource::Custom { content, cites } => (content.clone(), cites.clone()),
        }
    }

    /// Fails with an input error naming the first missing file.
    pub fn check_exists(&self) -> Result<()> {
        let (content, cites) = self.paths();
        for p in [content, cites] {
            if !p.is_file() {
                return Err(input_err!("dataset file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Everything a training run needs about one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    /// Row-L1-normalized features.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub graph: Graph,
    pub split: Split,
    pub class_count: usize,
    pub node_keys: Vec<String>,
    pub class_names: Vec<String>,
    pub dropped_citations: usize,
}

impl DatasetBundle {
    pub fn load(source: &DatasetSource, split_seed: u64, spec: &SplitSpec) -> Result<Self> {
        source.check_exists()?;
        let (content, cites) = source.paths();
        let raw = load_content_cites(&content, &cites)?;
        Self::from_raw(source.name(), raw, split_seed, spec)
    }

    pub fn from_raw(name: &str, raw: RawCorpus, split_seed: u64, spec: &SplitSpec) -> Result<Self> {
        let k = raw.num_classes();
        let mut counts = vec![0usize; k];
        raw.labels.iter().for_each(|&y| counts[y] += 1);
        if let Some(c) = counts.iter().position(|&m| m < spec.train_per_class) {
            return Err(input_err!(
                "class `{}` has {} nodes, fewer than the {} training nodes per class",
                raw.class_names[c],
                counts[c],
                spec.train_per_class
            ));
        }
        let graph = Graph::build(&raw.edges, raw.num_nodes())?;
        let split = make_splits(&raw.labels, k, split_seed, spec)?;
        Ok(DatasetBundle {
            name: name.to_string(),
            features: normalize_features(&raw.features),
            labels: raw.labels,
            graph,
            split,
            class_count: k,
            node_keys: raw.node_keys,
            class_names: raw.class_names,
            dropped_citations: raw.dropped_citations,
        })
    }

    /// Same corpus with a freshly drawn split.
    pub fn resplit(&self, split_seed: u64, spec: &SplitSpec) -> Result<Self> {
        let split = make_splits(&self.labels, self.class_count, split_seed, spec)?;
        Ok(DatasetBundle { split, ..self.clone() })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: n={} d={} k={} edges={} train={} val={} test={}",
            self.name,
            self.num_nodes(),
            self.feature_dim(),
            self.class_count,
            self.graph.num_undirected_edges(),
            self.split.train.len(),
            self.split.val.len(),
            self.split.test.len()
        )
    }
}

/// Path helper for the layout `<data_dir>/<name>/<name>.content`.
pub fn default_data_dir() -> &'static Path {
    Path::new("data")
}
