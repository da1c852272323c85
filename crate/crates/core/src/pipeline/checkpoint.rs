//! Checkpoint directories: `manifest.json`, `tensors.bin`, `rng_state.bin`.
//!
//! The blob holds every tensor as little-endian `f32` in manifest order,
//! followed by the payload length (`u64` LE) and its SHA-256.

use std::fs;
use std::path::Path;

use numcore::{RngStreams, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, RunConfig, System};
use crate::regime::RegimeDetector;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";
pub const RNG_FILE: &str = "rng_state.bin";
const TRAILER: usize = 8 + 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// `param` for trainable weights, `state` for controller-held scalars.
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    /// Resolved configuration in `key = value` form.
    pub config: String,
    pub stage: u8,
    pub variant: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor)>,
    pub rng: RngStreams,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn config(&self) -> Result<RunConfig, PipelineError> {
        RunConfig::from_text(&self.manifest.config)
    }

    pub fn param_count(&self) -> usize {
        self.manifest.tensors.iter().filter(|t| t.kind == "param").count()
    }
}

fn corrupt(msg: impl Into<String>) -> PipelineError {
    PipelineError::Corrupt(msg.into())
}

impl System {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut entries = Vec::new();
        for (prefix, store) in self.stores() {
            for (_, name, t) in store.iter() {
                entries.push(TensorEntry {
                    name: format!("{prefix}/{name}"),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    kind: "param".into(),
                });
                tensors.push((format!("{prefix}/{name}"), t.clone()));
            }
        }
        if self.detector.is_some() {
            for (name, v) in [("control/tau", self.tau), ("control/alpha", self.alpha)] {
                entries.push(TensorEntry {
                    name: name.into(),
                    shape: vec![1, 1],
                    dtype: "f32".into(),
                    kind: "state".into(),
                });
                tensors.push((name.into(), Tensor::scalar(v)));
            }
        }
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                config_hash: self.config.hash(),
                config: self.config.to_text(),
                stage: self.stage,
                variant: self.variant().label().into(),
                tensors: entries,
            },
            tensors,
            rng: self.rngs.clone(),
        }
    }

    /// Rebuilds a system from `ckpt`. The checkpoint must have been written
    /// for `config` unless `allow_mismatch`.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: RunConfig, allow_mismatch: bool) -> Result<Self, PipelineError> {
        let expected = config.hash();
        if expected != ckpt.manifest.config_hash && !allow_mismatch {
            return Err(PipelineError::ConfigMismatch {
                expected,
                found: ckpt.manifest.config_hash.clone(),
            });
        }
        let mut sys = System::from_config(config)?;
        if ckpt.tensors.iter().any(|(n, _)| n.starts_with("ae/")) {
            sys.detector = Some(RegimeDetector::new(&mut numcore::rng::named_rng(0, "placeholder")));
        }
        let mut loaded = 0;
        for (prefix, store) in sys.stores_mut() {
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                let key = format!("{prefix}/{}", store.name(id));
                let t = ckpt.get(&key).ok_or_else(|| corrupt(format!("missing tensor {key}")))?;
                if t.shape() != store.get(id).shape() {
                    return Err(corrupt(format!("tensor {key} has shape {:?}, expected {:?}", t.shape(), store.get(id).shape())));
                }
                *store.get_mut(id) = t.clone();
                loaded += 1;
            }
        }
        if loaded != ckpt.param_count() {
            return Err(corrupt(format!("checkpoint holds {} parameters, system uses {loaded}", ckpt.param_count())));
        }
        sys.stage = ckpt.manifest.stage;
        sys.rngs = ckpt.rng.clone();
        if sys.detector.is_some() {
            sys.tau = ckpt.get("control/tau").ok_or_else(|| corrupt("missing control/tau"))?.item();
            sys.alpha = ckpt.get("control/alpha").ok_or_else(|| corrupt("missing control/alpha"))?.item();
            sys.refresh_after_load()?;
        }
        Ok(sys)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Tensor payload plus its length-and-checksum trailer.
pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, t) in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&(out.len() as u64).to_le_bytes());
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(system: &System, dir: &Path) -> Result<(), PipelineError> {
    let ckpt = system.to_checkpoint();
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(TENSOR_FILE), &encode_tensors(&ckpt.tensors))?;
    write_atomic(&dir.join(RNG_FILE), &ckpt.rng.to_bytes())?;
    let manifest = serde_json::to_string_pretty(&ckpt.manifest).map_err(|e| corrupt(e.to_string()))?;
    // The manifest goes last: its presence marks a complete checkpoint.
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, PipelineError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(PipelineError::Resume(format!("no checkpoint in {}", dir.display())));
    }
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(&manifest_path)?).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(format!("format version {}", manifest.format_version)));
    }
    let text_hash: String = Sha256::digest(manifest.config.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    if text_hash != manifest.config_hash {
        return Err(corrupt("manifest config does not match its hash"));
    }
    let blob = fs::read(dir.join(TENSOR_FILE))?;
    if blob.len() < TRAILER {
        return Err(corrupt("tensor blob shorter than its trailer"));
    }
    let body = blob.len() - TRAILER;
    let stated = u64::from_le_bytes(blob[body..body + 8].try_into().expect("8 bytes")) as usize;
    if stated != body {
        return Err(corrupt(format!("tensor blob holds {body} bytes, trailer says {stated}")));
    }
    if Sha256::digest(&blob[..body]).as_slice() != &blob[body + 8..] {
        return Err(corrupt("tensor blob checksum mismatch"));
    }
    let need: usize = manifest.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    if need != body {
        return Err(corrupt(format!("manifest describes {need} bytes, blob holds {body}")));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut at = 0;
    for e in &manifest.tensors {
        if e.dtype != "f32" || e.shape.len() != 2 {
            return Err(corrupt(format!("tensor {} has unsupported layout {} {:?}", e.name, e.dtype, e.shape)));
        }
        let n = e.shape[0] * e.shape[1];
        let data = blob[at..at + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        at += 4 * n;
        let t = Tensor::matrix(e.shape[0], e.shape[1], data).map_err(|_| corrupt(format!("tensor {}", e.name)))?;
        tensors.push((e.name.clone(), t));
    }
    let rng = RngStreams::from_bytes(&fs::read(dir.join(RNG_FILE))?).map_err(|e| corrupt(format!("rng state: {e}")))?;
    Ok(Checkpoint { manifest, tensors, rng })
}
