//! Model checkpoints: a directory holding `manifest.json` and the flat
//! little-endian `f64` parameter vector in `params.bin`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use swarmwind_autodiff::ParamStore;

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    kind: String,
    params: Vec<ParamEntry>,
    model: M,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

fn entries(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(name, t)| ParamEntry {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
        })
        .collect()
}

pub fn save<M: Serialize>(dir: &Path, kind: &str, model: &M, params: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let env = Envelope {
        kind: kind.to_string(),
        params: entries(params),
        model,
    };
    let manifest = dir.join("manifest.json");
    std::fs::write(&manifest, serde_json::to_string_pretty(&env)?)
        .map_err(|e| Error::io(&manifest, e))?;
    let bytes: Vec<u8> = params
        .flat_values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let bin = dir.join("params.bin");
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

/// Reads the manifest and hands it to `build`, which must return a
/// parameter store of the recorded layout; the stored values are then
/// loaded into it.
pub fn load<M, T>(
    dir: &Path,
    kind: &str,
    build: impl FnOnce(M) -> Result<(T, ParamStore)>,
) -> Result<(T, ParamStore)>
where
    M: DeserializeOwned,
{
    let manifest = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let env: Envelope<M> = serde_json::from_str(&text)?;
    if env.kind != kind {
        return Err(Error::Format(format!(
            "checkpoint holds a {} model, expected {kind}",
            env.kind
        )));
    }
    let (model, mut params) = build(env.model)?;
    if entries(&params) != env.params {
        return Err(Error::Format(
            "checkpoint parameter layout does not match its manifest".into(),
        ));
    }
    let bin = dir.join("params.bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != 8 * params.numel() {
        return Err(Error::Format(format!(
            "params.bin has {} bytes, expected {}",
            bytes.len(),
            8 * params.numel()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    params.load_flat(&flat)?;
    Ok((model, params))
}
