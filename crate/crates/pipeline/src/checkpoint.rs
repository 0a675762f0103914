//! Checkpoint container: one text magic line, one JSON header line, then the
//! raw little-endian `f32` payload of every tensor in header order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use occdiff_model::ParamStore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{PipelineError, Result};

const MAGIC: &str = "occdiff-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Autoencoder,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Parameters of one module, keyed by full parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModuleBlob {
    pub tensors: BTreeMap<String, TensorBlob>,
}

impl ModuleBlob {
    /// Copies every parameter named `<module>.*` out of `store`.
    pub fn capture(store: &ParamStore, module: &str) -> Result<Self> {
        let prefix = format!("{module}.");
        let mut tensors = BTreeMap::new();
        for (name, var) in store.iter().filter(|(k, _)| k.starts_with(&prefix)) {
            tensors.insert(name.clone(), TensorBlob { shape: var.dims().to_vec(), data: store.values_f32(name)? });
        }
        if tensors.is_empty() {
            return Err(PipelineError::InvalidConfig(format!("no parameters under module {module:?}")));
        }
        Ok(ModuleBlob { tensors })
    }

    /// Same digest as [`ParamStore::hash_prefix`] over the module prefix.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for x in &t.data {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes the blob back into `store`; names and shapes must match exactly.
    pub fn restore(&self, store: &ParamStore, module: &str) -> Result<()> {
        let prefix = format!("{module}.");
        let expected: Vec<&String> = store.iter().map(|(k, _)| k).filter(|k| k.starts_with(&prefix)).collect();
        let given: Vec<&String> = self.tensors.keys().collect();
        if expected != given {
            return Err(PipelineError::InvalidConfig(format!(
                "module {module}: checkpoint has {} tensors, model expects {} (or names differ)",
                given.len(),
                expected.len()
            )));
        }
        for (name, t) in &self.tensors {
            store.assign(name, &t.data, &t.shape)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }
}

/// Per-dimension latent statistics used to standardize flow-matching targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub step: usize,
    /// Config snapshot in its text form.
    pub config: String,
    pub modules: BTreeMap<String, ModuleBlob>,
    /// Checksums of the frozen modules this checkpoint was trained against.
    pub parents: BTreeMap<String, String>,
    pub latent_stats: Option<LatentStats>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModuleHeader {
    sha256: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: String,
    kind: CheckpointKind,
    latent_stats: Option<LatentStats>,
    modules: BTreeMap<String, ModuleHeader>,
    parents: BTreeMap<String, String>,
    step: usize,
}

impl Checkpoint {
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.modules.iter().map(|(k, m)| (k.clone(), m.checksum())).collect()
    }

    pub fn module(&self, name: &str) -> Result<&ModuleBlob> {
        self.modules.get(name).ok_or_else(|| PipelineError::InvalidConfig(format!("checkpoint has no module {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            kind: self.kind,
            latent_stats: self.latent_stats.clone(),
            modules: self
                .modules
                .iter()
                .map(|(k, m)| {
                    let tensors = m.tensors.iter().map(|(n, t)| TensorHeader { name: n.clone(), shape: t.shape.clone() }).collect();
                    (k.clone(), ModuleHeader { sha256: m.checksum(), tensors })
                })
                .collect(),
            parents: self.parents.clone(),
            step: self.step,
        };
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}").expect("write to Vec");
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for m in self.modules.values() {
            for t in m.tensors.values() {
                for x in &t.data {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Parses and verifies every module checksum.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| PipelineError::Checkpoint { path: path.to_path_buf(), msg };
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic != MAGIC.as_bytes() {
            return Err(bad("not an occdiff checkpoint".into()));
        }
        let header_bytes = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| bad(format!("header: {e}")))?;
        let mut payload = lines.next().unwrap_or_default();
        let mut modules = BTreeMap::new();
        for (name, mh) in header.modules {
            let mut blob = ModuleBlob::default();
            for th in mh.tensors {
                let n: usize = th.shape.iter().product();
                if payload.len() < 4 * n {
                    return Err(bad(format!("payload truncated in {}", th.name)));
                }
                let (head, rest) = payload.split_at(4 * n);
                let data = head.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                payload = rest;
                blob.tensors.insert(th.name, TensorBlob { shape: th.shape, data });
            }
            let actual = blob.checksum();
            if actual != mh.sha256 {
                return Err(PipelineError::ChecksumMismatch { module: name, expected: mh.sha256, actual });
            }
            modules.insert(name, blob);
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Checkpoint {
            kind: header.kind,
            step: header.step,
            config: header.config,
            modules,
            parents: header.parents,
            latent_stats: header.latent_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut m = ModuleBlob::default();
        m.tensors.insert("dec.w".into(), TensorBlob { shape: vec![2, 3], data: vec![0.1, -2.5, 3.0, f32::MIN_POSITIVE, 1e-30, 7.0] });
        m.tensors.insert("dec.b".into(), TensorBlob { shape: vec![3], data: vec![0.0, -0.0, 1.0] });
        Checkpoint {
            kind: CheckpointKind::Diffusion,
            step: 42,
            config: "lr = 0.0001\n".into(),
            modules: BTreeMap::from([("dec".into(), m)]),
            parents: BTreeMap::from([("enc".into(), "ab".repeat(32))]),
            latent_stats: Some(LatentStats { mean: vec![0.1, 1.0 / 3.0], std: vec![2.0, 1e-7] }),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.latent_stats, c.latent_stats);
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 2] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes, Path::new("x")), Err(PipelineError::ChecksumMismatch { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..n - 4], Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"garbage\n{}\n", Path::new("x")).is_err());
    }
}
