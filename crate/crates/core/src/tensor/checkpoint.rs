//! Checkpoints: one flat little-endian f32 binary holding every parameter and
//! buffer, plus a JSON sidecar (`<file>.json`) mapping names to shapes and
//! byte offsets. Loads are strict: the store and the file must agree on the
//! full set of names and shapes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::{Scalar, Tensor, TensorError};

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    shape: [usize; 4],
    offset_bytes: u64,
    #[serde(default)]
    buffer: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    entries: BTreeMap<String, ManifestEntry>,
}

fn manifest_path(bin: &Path) -> std::path::PathBuf {
    let mut os = bin.as_os_str().to_os_string();
    os.push(".json");
    os.into()
}

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<(), TensorError> {
    let mut entries = BTreeMap::new();
    let mut blob: Vec<u8> = Vec::new();
    for e in &store.entries {
        if entries
            .insert(
                e.name.clone(),
                ManifestEntry { shape: e.value.shape(), offset_bytes: blob.len() as u64, buffer: e.buffer },
            )
            .is_some()
        {
            return Err(TensorError::Checkpoint(format!("duplicate parameter name {:?}", e.name)));
        }
        for &v in e.value.as_slice() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&blob)?;
    let manifest = Manifest { version: 1, entries };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    fs::write(manifest_path(path), text + "\n")?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(store: &mut ParamStore<S>, path: &Path) -> Result<(), TensorError> {
    let text = fs::read_to_string(manifest_path(path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| TensorError::Checkpoint(format!("manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(TensorError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let mut blob = Vec::new();
    fs::File::open(path)?.read_to_end(&mut blob)?;
    let mut seen = 0usize;
    for e in &mut store.entries {
        let m = manifest.entries.get(&e.name).ok_or_else(|| {
            TensorError::Checkpoint(format!("parameter {:?} missing from checkpoint", e.name))
        })?;
        if m.shape != e.value.shape() {
            return Err(TensorError::Checkpoint(format!(
                "parameter {:?} has shape {:?} in checkpoint, expected {:?}",
                e.name,
                m.shape,
                e.value.shape()
            )));
        }
        let count: usize = m.shape.iter().product();
        let start = m.offset_bytes as usize;
        let end = start + count * 4;
        if end > blob.len() {
            return Err(TensorError::Checkpoint(format!(
                "parameter {:?} extends past end of file (offset {start}, {count} values, file {} bytes)",
                e.name,
                blob.len()
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let b = &blob[start + i * 4..start + i * 4 + 4];
            data.push(S::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64));
        }
        e.value = Tensor::from_vec(m.shape, data);
        seen += 1;
    }
    if seen != manifest.entries.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint holds {} parameters, store expects {seen}",
            manifest.entries.len()
        )));
    }
    Ok(())
}
