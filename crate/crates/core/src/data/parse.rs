use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::engine::Tensor;
use crate::error::{input_err, Error, Result};

/// A corpus as read from disk, before normalization and splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCorpus {
    /// Raw feature flags, one row per node.
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Citation pairs in dense ids, file order, duplicates kept.
    pub edges: Vec<(usize, usize)>,
    /// Dense id to node key.
    pub node_keys: Vec<String>,
    /// Dense id to class name.
    pub class_names: Vec<String>,
    /// Citation lines whose endpoints were not both in the content file.
    pub dropped_citations: usize,
}

impl RawCorpus {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Key to dense id.
    pub fn id_map(&self) -> HashMap<&str, usize> {
        self.node_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<RawCorpus> {
    let content = read_text(content_path)?;
    let cites = read_text(cites_path)?;
    parse_content_cites(&content, content_path, &cites, cites_path)
}

/// Parses already-loaded file text; the paths only label errors.
pub fn parse_content_cites(content: &str, content_path: &Path, cites: &str, cites_path: &Path) -> Result<RawCorpus> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut node_keys = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;

    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err(
                content_path,
                lineno,
                format!(
                    "expected a key, feature values and a class, found {} fields",
                    fields.len()
                ),
            ));
        }
        let d = fields.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("expected {} fields, found {}", expected + 2, fields.len()),
                ));
            }
            Some(_) => {}
        }
        let key = fields[0];
        if ids.contains_key(key) {
            return Err(parse_err(content_path, lineno, format!("duplicate node key `{key}`")));
        }
        ids.insert(key.to_string(), node_keys.len());
        node_keys.push(key.to_string());
        for f in &fields[1..=d] {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(content_path, lineno, format!("bad feature value `{f}`")))?;
            values.push(v);
        }
        let class = fields[d + 1];
        let next = class_names.len();
        let y = *class_ids.entry(class.to_string()).or_insert(next);
        if y == next {
            class_names.push(class.to_string());
        }
        labels.push(y);
    }
    let Some(dim) = dim else {
        return Err(input_err!("content file {} has no nodes", content_path.display()));
    };

    let mut edges = Vec::new();
    let mut dropped = 0;
    for (i, line) in cites.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [cited, citing] => match (ids.get(*cited), ids.get(*citing)) {
                (Some(&a), Some(&b)) => edges.push((a, b)),
                _ => dropped += 1,
            },
            _ => {
                return Err(parse_err(
                    cites_path,
                    i + 1,
                    format!("expected 2 node keys, found {} fields", fields.len()),
                ))
            }
        }
    }
    if dropped > 0 {
        warn!(
            "{}: dropped {dropped} citations with an endpoint missing from {}",
            cites_path.display(),
            content_path.display()
        );
    }

    Ok(RawCorpus {
        features: Tensor::from_vec(labels.len(), dim, values)?,
        labels,
        edges,
        node_keys,
        class_names,
        dropped_citations: dropped,
    })
}

/// Divides each row by its L1 norm; all-zero rows stay zero.
pub fn normalize_features(features: &Tensor) -> Tensor {
    let mut out = features.clone();
    let cols = out.cols();
    if cols == 0 {
        return out;
    }
    for row in out.values_mut().chunks_mut(cols) {
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str, cites: &str) -> Result<RawCorpus> {
        parse_content_cites(content, Path::new("c.content"), cites, Path::new("c.cites"))
    }

    #[test]
    fn two_node_fixture() {
        let raw = parse("p1 1 0 1 Theory\np2 0 1 0 Rules\n", "p1 p2\n").unwrap();
        assert_eq!(raw.num_nodes(), 2);
        assert_eq!(raw.feature_dim(), 3);
        assert_eq!(raw.labels, vec![0, 1]);
        assert_eq!(raw.class_names, vec!["Theory", "Rules"]);
        assert_eq!(raw.edges, vec![(0, 1)]);
        assert_eq!(raw.features.values(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(raw.id_map()["p2"], 1);
    }

    #[test]
    fn ids_follow_first_appearance() {
        let raw = parse("z 1 B\na 0 A\nm 1 B\n", "").unwrap();
        assert_eq!(raw.node_keys, vec!["z", "a", "m"]);
        assert_eq!(raw.labels, vec![0, 1, 0]);
    }

    #[test]
    fn dangling_citations_are_counted() {
        let raw = parse("a 1 X\nb 0 X\n", "a b\na ghost\nghost b\n\nb a\n").unwrap();
        assert_eq!(raw.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(raw.dropped_citations, 2);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse("a 1 0 X\nb 1 X\n", "") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, Path::new("c.content"));
            }
            other => panic!("{other:?}"),
        }
        match parse("a 1 X\n", "a a\na\n") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, Path::new("c.cites"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("a 1 X\na 0 Y\n", ""), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("a x X\n", ""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_content_is_an_input_error() {
        assert!(matches!(parse("", "a b\n"), Err(Error::Input(_))));
        assert!(matches!(parse("\n  \n", ""), Err(Error::Input(_))));
    }

    #[test]
    fn normalization() {
        let x = Tensor::from_rows(&[
            vec![1.0, 1.0, 0.0, 2.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let y = normalize_features(&x);
        assert_eq!(y.row(0), &[0.25, 0.25, 0.0, 0.5]);
        assert_eq!(y.row(1), &[0.0; 4]);
        assert_eq!(y.row(2), x.row(2));
    }
}
