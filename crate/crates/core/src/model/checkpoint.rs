//! Single-file checkpoints: a `key=value` text header followed by
//! little-endian f64 arrays in manifest order.
//!
//! ```text
//! ggnn-checkpoint 1
//! variant=residual_ggnn
//! num_layers=2
//! ...
//! array=weight.0 rows=1433 cols=64 offset=0 count=91712
//! array=bias.0 rows=1 cols=64 offset=733696 count=64
//! end
//! <binary payload>
//! ```
//!
//! Offsets are in bytes from the first byte after the `end` line.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, Variant};
use crate::engine::{Real, Tensor};
use crate::error::{input_err, Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &str = "ggnn-checkpoint 1";
const END_MARKER: &str = "end\n";

struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    count: usize,
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

fn encode<T: Real>(model: &Model<T>) -> Vec<u8> {
    let c = model.config();
    let mut arrays: Vec<(String, &[T], usize, usize)> = Vec::new();
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        arrays.push((format!("weight.{l}"), w.value.values(), w.value.rows(), w.value.cols()));
        arrays.push((format!("bias.{l}"), b.value.values(), 1, b.value.cols()));
    }
    if let Some(t) = model.theta() {
        arrays.push(("theta".to_string(), &t.theta, 1, t.len()));
    }

    let mut header = format!(
        "{CHECKPOINT_MAGIC}\nvariant={}\nnum_layers={}\ninput_dim={}\nhidden_dim={}\noutput_dim={}\n\
         alpha={:?}\ndropout_p={:?}\nseed={}\narrays={}\n",
        c.variant,
        c.num_layers,
        c.input_dim,
        c.hidden_dim,
        c.output_dim,
        c.alpha,
        c.dropout_p,
        c.seed,
        arrays.len()
    );
    let mut offset = 0;
    for (name, values, rows, cols) in &arrays {
        header.push_str(&format!(
            "array={name} rows={rows} cols={cols} offset={offset} count={}\n",
            values.len()
        ));
        offset += values.len() * 8;
    }
    header.push_str(END_MARKER);

    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for (_, values, _, _) in &arrays {
        for v in values.iter() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    bytes
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Input(msg) => input_err!("checkpoint {}: {msg}", path.display()),
        other => other,
    })
}

fn decode<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let marker = format!("\n{END_MARKER}");
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| input_err!("missing `end` line"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| input_err!("header is not UTF-8"))?;
    let payload = &bytes[header_end..];

    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(input_err!("not a checkpoint (bad magic line)"));
    }
    let mut keys = HashMap::new();
    let mut entries = Vec::new();
    for line in lines {
        if line == "end" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| input_err!("malformed header line `{line}`"))?;
        if key == "array" {
            entries.push(parse_array(value)?);
        } else {
            keys.insert(key.to_string(), value.to_string());
        }
    }
    let get = |k: &str| keys.get(k).ok_or_else(|| input_err!("header lacks `{k}`"));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| input_err!("bad value for `{k}`")) };
    let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| input_err!("bad value for `{k}`")) };
    let config = ModelConfig {
        variant: get("variant")?.parse()?,
        num_layers: num("num_layers")?,
        input_dim: num("input_dim")?,
        hidden_dim: num("hidden_dim")?,
        output_dim: num("output_dim")?,
        alpha: real("alpha")?,
        dropout_p: real("dropout_p")?,
        seed: get("seed")?.parse().map_err(|_| input_err!("bad value for `seed`"))?,
    };
    if num("arrays")? != entries.len() {
        return Err(input_err!("array count does not match the manifest"));
    }

    let mut arrays: HashMap<String, Tensor<T>> = HashMap::new();
    for e in entries {
        let end = e.offset + e.count * 8;
        if e.count != e.rows * e.cols || end > payload.len() {
            return Err(input_err!("array `{}` is inconsistent with the payload", e.name));
        }
        let values = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        arrays.insert(e.name, Tensor::from_vec(e.rows, e.cols, values)?);
    }
    let mut take = |name: String| arrays.remove(&name).ok_or_else(|| input_err!("missing array `{name}`"));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..config.num_layers {
        weights.push(take(format!("weight.{l}"))?);
        biases.push(take(format!("bias.{l}"))?);
    }
    let theta = match config.variant {
        Variant::LearnableGgnn => Some(take("theta".into())?.into_values()),
        _ => None,
    };
    Model::from_parts(config, weights, biases, theta)
}

fn parse_array(spec: &str) -> Result<ArrayEntry> {
    let mut parts = spec.split_whitespace();
    let name = parts.next().ok_or_else(|| input_err!("unnamed array"))?.to_string();
    let mut fields = HashMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| input_err!("bad array field `{p}`"))?;
        let v: usize = v.parse().map_err(|_| input_err!("bad array field `{p}`"))?;
        fields.insert(k, v);
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| input_err!("array `{name}` lacks `{k}`"))
    };
    Ok(ArrayEntry {
        rows: field("rows")?,
        cols: field("cols")?,
        offset: field("offset")?,
        count: field("count")?,
        name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            num_layers: 3,
            input_dim: 6,
            hidden_dim: 4,
            output_dim: 2,
            alpha: 0.13,
            dropout_p: 0.5,
            seed: 17,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        for variant in Variant::ALL {
            let mut model = Model::<f64>::init(config(variant), &g).unwrap();
            if let Some(t) = model.theta_mut() {
                t.theta = vec![0.1, -2.5, 3.0, 1e-300, -0.0];
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&model, &path).unwrap();
            let loaded: Model<f64> = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, model, "{variant}");
        }
    }

    #[test]
    fn header_is_readable_text() {
        let g = Graph::build(&[], 2).unwrap();
        let model = Model::<f64>::init(config(Variant::Gnn), &g).unwrap();
        let bytes = encode(&model);
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.starts_with("ggnn-checkpoint 1\nvariant=gnn\nnum_layers=3\n"));
        assert!(text.contains("alpha=0.13\n"));
        assert!(text.contains("array=weight.0 rows=6 cols=4 offset=0 count=24\n"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let g = Graph::build(&[], 2).unwrap();
        let model = Model::<f64>::init(config(Variant::Gnn), &g).unwrap();
        let mut bytes = encode(&model);
        bytes.truncate(bytes.len() - 8);
        assert!(decode::<f64>(&bytes).is_err());
        assert!(decode::<f64>(b"hello\nend\n").is_err());
    }
}
