//! Checkpoint files: an 12-byte magic, a little-endian `u32` manifest length,
//! the JSON manifest, then every parameter as contiguous little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"ECHO-CKPT v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    params: Vec<Entry>,
    metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore<f32>, metadata: &serde_json::Value) -> Result<()> {
    let mut offset = 0;
    let params = store
        .iter()
        .map(|(_, name, t)| {
            let e = Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.numel();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        params,
        metadata: metadata.clone(),
    })?;
    let len = u32::try_from(manifest.len()).map_err(|_| NnError::Checkpoint("manifest too large".into()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&manifest)?;
    for (_, _, t) in store.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let mut magic = [0u8; 12];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Checkpoint("file too short for a checkpoint header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| NnError::Checkpoint("truncated manifest length".into()))?;
    let mut manifest = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut manifest)
        .map_err(|_| NnError::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest).map_err(|e| NnError::Checkpoint(format!("bad manifest: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(NnError::Checkpoint("payload is not a whole number of f32 values".into()));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut store = ParamStore::new();
    let mut expected = 0;
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        if e.offset != expected || e.offset + n > values.len() {
            return Err(NnError::Checkpoint(format!("parameter {} lies outside the payload", e.name)));
        }
        expected += n;
        let t = Tensor::new(&e.shape, values[e.offset..e.offset + n].to_vec())?;
        store.add(e.name, t)?;
    }
    if expected != values.len() {
        return Err(NnError::Checkpoint(format!(
            "payload holds {} values but manifest describes {expected}",
            values.len()
        )));
    }
    Ok((store, manifest.metadata))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>, metadata: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), store, metadata)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
