//! Directory dump of a [`DatasetBundle`].
//!
//! ```text
//! meta.txt         key=value lines: name, n, d, k, edges, counts
//! manifest.txt     one line per array: <file> <dtype> <count>
//! features.bin     f64, n*d, row-major
//! labels.bin       u64, n
//! edges.bin        u64 pairs (u, v), u < v, in edge-id order
//! train.bin ...    u64 node ids
//! node_keys.txt    one key per line, by dense id
//! class_names.txt  one name per line, by class id
//! ```
//! All binary arrays are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DatasetBundle, Split};
use crate::engine::Tensor;
use crate::error::{input_err, Error, Result};
use crate::graph::Graph;
use crate::io::write_atomic;

fn u64_bytes(values: impl Iterator<Item = usize>) -> Vec<u8> {
    values.flat_map(|v| (v as u64).to_le_bytes()).collect()
}

pub fn dump_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let edges = bundle.graph.edge_list();
    let arrays: Vec<(&str, &str, usize, Vec<u8>)> = vec![
        (
            "features.bin",
            "f64",
            bundle.features.len(),
            bundle.features.values().iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        (
            "labels.bin",
            "u64",
            bundle.labels.len(),
            u64_bytes(bundle.labels.iter().copied()),
        ),
        (
            "edges.bin",
            "u64",
            edges.len() * 2,
            u64_bytes(edges.iter().flat_map(|&(u, v)| [u, v])),
        ),
        (
            "train.bin",
            "u64",
            bundle.split.train.len(),
            u64_bytes(bundle.split.train.iter().copied()),
        ),
        (
            "val.bin",
            "u64",
            bundle.split.val.len(),
            u64_bytes(bundle.split.val.iter().copied()),
        ),
        (
            "test.bin",
            "u64",
            bundle.split.test.len(),
            u64_bytes(bundle.split.test.iter().copied()),
        ),
    ];

    let mut manifest = String::new();
    for (file, dtype, count, bytes) in &arrays {
        manifest.push_str(&format!("{file} {dtype} {count}\n"));
        write_atomic(&dir.join(file), bytes)?;
    }
    write_atomic(&dir.join("node_keys.txt"), lines(&bundle.node_keys).as_bytes())?;
    write_atomic(&dir.join("class_names.txt"), lines(&bundle.class_names).as_bytes())?;
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;

    let meta = format!(
        "name={}\nn={}\nd={}\nk={}\nedges={}\ntrain={}\nval={}\ntest={}\ndropped_citations={}\n",
        bundle.name,
        bundle.num_nodes(),
        bundle.feature_dim(),
        bundle.class_count,
        edges.len(),
        bundle.split.train.len(),
        bundle.split.val.len(),
        bundle.split.test.len(),
        bundle.dropped_citations
    );
    write_atomic(&dir.join("meta.txt"), meta.as_bytes())
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    let path = dir.join(file);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn read_text(dir: &Path, file: &str) -> Result<String> {
    String::from_utf8(read(dir, file)?).map_err(|_| input_err!("{file} is not UTF-8"))
}

pub fn load_bundle_dump(dir: &Path) -> Result<DatasetBundle> {
    let meta: HashMap<String, String> = read_text(dir, "meta.txt")?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let get = |k: &str| meta.get(k).ok_or_else(|| input_err!("meta.txt lacks `{k}`"));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| input_err!("meta.txt: bad `{k}`")) };
    let (n, d, k) = (num("n")?, num("d")?, num("k")?);

    let mut counts = HashMap::new();
    for line in read_text(dir, "manifest.txt")?.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [file, dtype, count] = fields.as_slice() else {
            return Err(input_err!("manifest.txt: malformed line `{line}`"));
        };
        let count: usize = count
            .parse()
            .map_err(|_| input_err!("manifest.txt: bad count in `{line}`"))?;
        counts.insert(file.to_string(), (dtype.to_string(), count));
    }
    let load = |file: &str, dtype: &str| -> Result<Vec<[u8; 8]>> {
        let (declared, count) = counts
            .get(file)
            .ok_or_else(|| input_err!("manifest.txt does not list {file}"))?;
        if declared != dtype {
            return Err(input_err!("{file}: expected dtype {dtype}, manifest says {declared}"));
        }
        let bytes = read(dir, file)?;
        if bytes.len() != count * 8 {
            return Err(input_err!("{file}: {} bytes for {count} values", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| c.try_into().expect("8-byte chunk"))
            .collect())
    };
    let ids = |file: &str| -> Result<Vec<usize>> {
        load(file, "u64")?
            .into_iter()
            .map(|b| usize::try_from(u64::from_le_bytes(b)).map_err(|_| input_err!("{file}: id overflow")))
            .collect()
    };

    let features: Vec<f64> = load("features.bin", "f64")?
        .into_iter()
        .map(f64::from_le_bytes)
        .collect();
    let labels = ids("labels.bin")?;
    let flat_edges = ids("edges.bin")?;
    let edges: Vec<(usize, usize)> = flat_edges.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    if labels.len() != n || labels.iter().any(|&y| y >= k) {
        return Err(input_err!("labels.bin disagrees with meta.txt"));
    }
    let node_keys: Vec<String> = read_text(dir, "node_keys.txt")?.lines().map(str::to_string).collect();
    let class_names: Vec<String> = read_text(dir, "class_names.txt")?.lines().map(str::to_string).collect();
    if node_keys.len() != n || class_names.len() != k {
        return Err(input_err!("key or class name lists disagree with meta.txt"));
    }
    let split = Split {
        train: ids("train.bin")?,
        val: ids("val.bin")?,
        test: ids("test.bin")?,
    };
    if split.train.iter().chain(&split.val).chain(&split.test).any(|&u| u >= n) {
        return Err(input_err!("split node id outside [0, {n})"));
    }

    Ok(DatasetBundle {
        name: get("name")?.clone(),
        features: Tensor::from_vec(n, d, features)?,
        labels,
        graph: Graph::build(&edges, n)?,
        split,
        class_count: k,
        node_keys,
        class_names,
        dropped_citations: num("dropped_citations")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_content_cites, SplitSpec};

    fn bundle() -> DatasetBundle {
        let content = "a 1 0 1 X\nb 0 1 1 Y\nc 1 1 1 X\nd 0 0 1 Y\ne 3 0 0 X\nf 0 0 0 Y\n";
        let cites = "a b\nb c\nc a\nd e\ne ghost\n";
        let raw = parse_content_cites(content, Path::new("t"), cites, Path::new("t")).unwrap();
        let spec = SplitSpec {
            train_per_class: 1,
            num_val: 2,
            num_test: 2,
        };
        DatasetBundle::from_raw("tiny", raw, 7, &spec).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        dump_bundle(&b, dir.path()).unwrap();
        assert_eq!(load_bundle_dump(dir.path()).unwrap(), b);
        let meta = fs::read_to_string(dir.path().join("meta.txt")).unwrap();
        assert!(meta.starts_with("name=tiny\nn=6\nd=3\nk=2\nedges=4\n"), "{meta}");
        assert!(meta.contains("dropped_citations=1"));
    }

    #[test]
    fn truncated_array_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        dump_bundle(&bundle(), dir.path()).unwrap();
        let path = dir.path().join("features.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(load_bundle_dump(dir.path()).is_err());
    }
}
