//! Tensor container: a JSON manifest plus a flat little-endian `f64` blob.
//!
//! The manifest is any JSON object with an extra `"tensors"` field mapping
//! each name to `{"shape", "data_file", "offset"}`. `offset` is in bytes and
//! `data_file` is relative to the manifest's directory. Writers emit tensors
//! in name order so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data_file: String,
    pub offset: u64,
}

/// Blob path paired with a manifest: `model.json` -> `model.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save<H: Serialize>(manifest: &Path, header: &H, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let blob = blob_path(manifest);
    let data_file = blob
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad manifest path {}", manifest.display())))?
        .to_string();

    let mut bytes = Vec::new();
    let mut entries = BTreeMap::new();
    for (name, t) in tensors {
        entries.insert(
            name.clone(),
            TensorEntry { shape: t.shape().to_vec(), data_file: data_file.clone(), offset: bytes.len() as u64 },
        );
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut value = serde_json::to_value(header)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::invalid("container header must serialize to a JSON object"))?;
    obj.insert("tensors".into(), serde_json::to_value(&entries)?);

    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let text = serde_json::to_string_pretty(&value)?;
    std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
}

pub fn load<H: DeserializeOwned>(manifest: &Path) -> Result<(H, BTreeMap<String, Tensor>)> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::invalid(format!("{} is not a JSON object", manifest.display())))?;
    let entries: BTreeMap<String, TensorEntry> = match obj.remove("tensors") {
        Some(v) => serde_json::from_value(v)?,
        None => return Err(Error::invalid(format!("{} has no \"tensors\" field", manifest.display()))),
    };
    let header: H = serde_json::from_value(value)?;

    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut tensors = BTreeMap::new();
    for (name, e) in entries {
        if !blobs.contains_key(&e.data_file) {
            let p = dir.join(&e.data_file);
            let b = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
            blobs.insert(e.data_file.clone(), b);
        }
        let blob = &blobs[&e.data_file];
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        if end > blob.len() {
            return Err(Error::invalid(format!(
                "tensor {name} spans bytes {start}..{end} but {} has {} bytes",
                e.data_file,
                blob.len()
            )));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.insert(name, Tensor::new(e.shape, data)?);
    }
    Ok((header, tensors))
}
