//! Checkpoint format: one little-endian `f64` blob per parameter tensor
//! plus a `manifest.txt` listing names, shapes and checksums alongside the
//! configuration snapshot. Text and blobs are written deterministically,
//! so load followed by save is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::NetParams;

pub const MANIFEST_FILE: &str = "manifest.txt";
const FORMAT_TAG: &str = "satres-checkpoint-v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn tensor_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Combined checksum over every parameter of a network, in name order.
/// Used for the frozen-encoder contract.
pub fn params_checksum(net: &dyn NetParams) -> String {
    let mut entries: Vec<(String, Vec<u8>)> = Vec::new();
    net.visit_params(&mut |name, view| {
        entries.push((name.to_string(), tensor_bytes(view.iter().copied())));
    });
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    for (name, bytes) in &entries {
        hasher.update(name.as_bytes());
        hasher.update(bytes);
    }
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub kind: String,
    pub iteration: u64,
    pub seed: u64,
    /// Canonical `key=value` configuration snapshot.
    pub config_text: String,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={FORMAT_TAG}");
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "iteration={}", self.iteration);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "config_begin");
        s.push_str(&self.config_text);
        let _ = writeln!(s, "config_end");
        for t in &self.tensors {
            let shape = t
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let _ = writeln!(s, "tensor={} shape={} sha256={}", t.name, shape, t.sha256);
        }
        s
    }

    fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(format!("manifest: {msg}"));
        let mut lines = text.lines();
        let mut expect = |prefix: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            line.strip_prefix(prefix)
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{prefix}...`, got `{line}`")))
        };
        let format = expect("format=")?;
        if format != FORMAT_TAG {
            return Err(bad(&format!("unknown format `{format}`")));
        }
        let kind = expect("kind=")?;
        let iteration = expect("iteration=")?
            .parse()
            .map_err(|_| bad("bad iteration"))?;
        let seed = expect("seed=")?.parse().map_err(|_| bad("bad seed"))?;
        let begin = lines.next().ok_or_else(|| bad("truncated"))?;
        if begin != "config_begin" {
            return Err(bad("missing config_begin"));
        }
        let mut config_text = String::new();
        let mut tensors = Vec::new();
        let mut in_config = true;
        for line in lines {
            if in_config {
                if line == "config_end" {
                    in_config = false;
                } else {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                continue;
            }
            let rest = line
                .strip_prefix("tensor=")
                .ok_or_else(|| bad(&format!("unexpected line `{line}`")))?;
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("tensor missing name"))?;
            let shape_part = parts
                .next()
                .and_then(|p| p.strip_prefix("shape="))
                .ok_or_else(|| bad("tensor missing shape"))?;
            let sha_part = parts
                .next()
                .and_then(|p| p.strip_prefix("sha256="))
                .ok_or_else(|| bad("tensor missing sha256"))?;
            let shape = shape_part
                .split('x')
                .map(|d| d.parse().map_err(|_| bad("bad shape")))
                .collect::<Result<Vec<usize>>>()?;
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape,
                sha256: sha_part.to_string(),
            });
        }
        if in_config {
            return Err(bad("missing config_end"));
        }
        Ok(CheckpointManifest {
            kind,
            iteration,
            seed,
            config_text,
            tensors,
        })
    }
}

/// Snapshot of every parameter of the given networks, name-sorted.
pub fn collect_params(nets: &[&dyn NetParams]) -> Vec<(String, ArrayD<f64>)> {
    let mut out: Vec<(String, ArrayD<f64>)> = Vec::new();
    for net in nets {
        net.visit_params(&mut |name, view| {
            out.push((name.to_string(), view.to_owned()));
        });
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Writes a checkpoint directory: `manifest.txt` plus one `.bin` per tensor.
pub fn save_checkpoint(
    dir: &Path,
    kind: &str,
    iteration: u64,
    seed: u64,
    config_text: &str,
    tensors: &[(String, ArrayD<f64>)],
) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, data) in tensors {
        let bytes = tensor_bytes(data.iter().copied());
        let sha = sha256_hex(&bytes);
        std::fs::write(dir.join(format!("{name}.bin")), &bytes)?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: data.shape().to_vec(),
            sha256: sha,
        });
    }
    let manifest = CheckpointManifest {
        kind: kind.to_string(),
        iteration,
        seed,
        config_text: config_text.to_string(),
        tensors: entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

/// Reads a checkpoint directory back, verifying checksums and shapes.
pub fn read_checkpoint(dir: &Path) -> Result<(CheckpointManifest, BTreeMap<String, ArrayD<f64>>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let manifest = CheckpointManifest::parse(&std::fs::read_to_string(&manifest_path)?)?;
    let mut tensors = BTreeMap::new();
    for entry in &manifest.tensors {
        let path = dir.join(format!("{}.bin", entry.name));
        let bytes = std::fs::read(&path)
            .map_err(|_| Error::MissingArtifact(path.clone()))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch for tensor {}",
                entry.name
            )));
        }
        let count: usize = entry.shape.iter().product();
        if bytes.len() != count * 8 {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} bytes, expected {}",
                entry.name,
                bytes.len(),
                count * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&entry.shape), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
        tensors.insert(entry.name.clone(), arr);
    }
    Ok((manifest, tensors))
}

/// Installs loaded tensors into a network; every parameter must be present
/// with a matching shape.
pub fn apply_params(net: &mut dyn NetParams, tensors: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
    let mut missing = None;
    let mut mismatch = None;
    net.visit_params_mut(&mut |name, mut view| {
        match tensors.get(name) {
            Some(t) if t.shape() == view.shape() => view.assign(t),
            Some(t) => {
                mismatch.get_or_insert(format!(
                    "tensor {name}: checkpoint shape {:?} vs network shape {:?}",
                    t.shape(),
                    view.shape()
                ));
            }
            None => {
                missing.get_or_insert(name.to_string());
            }
        }
    });
    if let Some(m) = mismatch {
        return Err(Error::Checkpoint(m));
    }
    if let Some(name) = missing {
        return Err(Error::Checkpoint(format!("tensor {name} absent from checkpoint")));
    }
    Ok(())
}
