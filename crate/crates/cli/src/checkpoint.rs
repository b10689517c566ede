//! Checkpoint directory: `manifest.json` plus a little-endian `f64` payload.
//!
//! The payload holds every parameter tensor in store order, followed by the
//! Adam first and second moments when an optimizer state is saved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tcvae::nn::AdamState;
use tcvae::tcvae::{history_csv, LossReport, ModelConfig, TcVae, TrainState};
use tcvae::NormalizationRecord;

use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "tcvae-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` units.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub payload: String,
    pub dtype: String,
    /// Total `f64` values in the payload.
    pub payload_len: usize,
    pub normalization: NormalizationRecord,
    pub optimizer: Option<OptimizerEntry>,
    pub history: Vec<LossReport>,
    /// SHA-256 of the loss-history CSV.
    pub history_digest: String,
    /// Resolved run configuration, echoed verbatim.
    pub config: serde_json::Value,
}

pub fn history_digest(history: &[LossReport]) -> String {
    let d = Sha256::digest(history_csv(history).as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the model (and optionally its training state) into `dir`.
pub fn save(dir: &Path, model: &TcVae, state: Option<&TrainState>, config: serde_json::Value) -> CliResult<Manifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(model.store.len());
    let mut values: Vec<f64> = Vec::with_capacity(model.store.n_scalars() * 3);
    for t in &model.store.tensors {
        tensors.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset: values.len() });
        values.extend_from_slice(&t.data);
    }
    let optimizer = state.map(|s| {
        for m in s.adam.m.iter().chain(&s.adam.v) {
            values.extend_from_slice(m);
        }
        OptimizerEntry {
            epoch: s.epoch,
            step: s.adam.step,
            lr: s.adam.lr,
            beta1: s.adam.beta1,
            beta2: s.adam.beta2,
            eps: s.adam.eps,
        }
    });
    let history = state.map(|s| s.history.clone()).unwrap_or_default();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        model: model.cfg.clone(),
        tensors,
        payload: PAYLOAD.into(),
        dtype: "f64le".into(),
        payload_len: values.len(),
        normalization: model.normalization.clone(),
        optimizer,
        history_digest: history_digest(&history),
        history,
        config,
    };
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(PAYLOAD), bytes)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    // check the version before the schema so old layouts report exit 4
    match (raw.get("format").and_then(|v| v.as_str()), raw.get("version").and_then(|v| v.as_u64())) {
        (Some(FORMAT), Some(v)) if v == VERSION as u64 => {}
        (Some(FORMAT), Some(v)) => {
            return Err(CliError::Version(format!("checkpoint version {v}, this build reads {VERSION}")));
        }
        _ => return Err(CliError::Version(format!("{} is not a version-{VERSION} checkpoint manifest", path.display()))),
    }
    Ok(serde_json::from_value(raw)?)
}

/// Loads a model and, when saved, its training state.
pub fn load(dir: &Path) -> CliResult<(TcVae, Option<TrainState>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(&manifest.payload))?;
    if bytes.len() != manifest.payload_len * 8 {
        return Err(CliError::Usage(format!(
            "payload has {} bytes, manifest declares {} values",
            bytes.len(),
            manifest.payload_len
        )));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut model = TcVae::new(manifest.model.clone(), 0)?;
    if model.store.len() != manifest.tensors.len() {
        return Err(CliError::Usage(format!(
            "manifest lists {} tensors, model config builds {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    let n = model.store.n_scalars();
    let expected = n * if manifest.optimizer.is_some() { 3 } else { 1 };
    if manifest.payload_len != expected {
        return Err(CliError::Usage(format!("payload holds {} values, shapes need {expected}", manifest.payload_len)));
    }
    for (t, e) in model.store.tensors.iter_mut().zip(&manifest.tensors) {
        if t.name != e.name || t.shape != e.shape {
            return Err(CliError::Usage(format!("tensor `{}` {:?} does not match `{}` {:?}", e.name, e.shape, t.name, t.shape)));
        }
        let len = t.data.len();
        t.data.copy_from_slice(&values[e.offset..e.offset + len]);
    }
    model.normalization = manifest.normalization.clone();
    if history_digest(&manifest.history) != manifest.history_digest {
        return Err(CliError::Usage("loss history does not match its digest".into()));
    }
    let state = manifest.optimizer.as_ref().map(|o| {
        let mut adam = AdamState::new(&model.store, o.lr);
        let mut at = n;
        for m in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            let len = m.len();
            m.copy_from_slice(&values[at..at + len]);
            at += len;
        }
        adam.step = o.step;
        adam.beta1 = o.beta1;
        adam.beta2 = o.beta2;
        adam.eps = o.eps;
        TrainState { epoch: o.epoch, adam, history: manifest.history.clone() }
    });
    Ok((model, state, manifest))
}
