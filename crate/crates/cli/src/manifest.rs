//! Run manifests: the resolved config, seed, tool version and SHA-256 of
//! every input and output file, written next to the artifacts.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: &str = "protext-run/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: String,
    pub command: String,
    /// Hash of the command, the config (minus output location and logging) and the input hashes.
    pub run_id: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    /// Keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Collects the files a command reads and writes.
#[derive(Debug, Default)]
pub struct Recorder {
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// A tensor container: the JSON manifest and its binary blob.
    pub fn input_container(&mut self, path: &Path) -> CliResult<()> {
        self.input(path)?;
        self.input(&protext::container::blob_path(path))
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn output_container(&mut self, path: PathBuf) {
        self.outputs.push(protext::container::blob_path(&path));
        self.outputs.push(path);
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    /// Hashes every output and writes `OUT/<command>.manifest.json`.
    pub fn finish(self, out: &Path, command: &str, seed: u64, config: &RunConfig) -> CliResult<PathBuf> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let key = p.strip_prefix(out).unwrap_or(p).display().to_string();
            outputs.insert(key, sha256_file(p)?);
        }
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION.to_string(),
            command: command.to_string(),
            run_id: run_id(command, config, &self.inputs)?,
            version: crate::VERSION.to_string(),
            seed,
            config: config.clone(),
            inputs: self.inputs,
            outputs,
        };
        let path = out.join(format!("{command}.manifest.json"));
        if let Ok(previous) = RunManifest::load(&path) {
            if previous.run_id != manifest.run_id {
                log::warn!("replacing run {} in {}", previous.run_id, out.display());
            }
        }
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

fn run_id(command: &str, config: &RunConfig, inputs: &BTreeMap<String, String>) -> CliResult<String> {
    let stable = RunConfig { out: None, log_level: None, ..config.clone() };
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(serde_json::to_vec(&stable)?);
    hasher.update(serde_json::to_vec(inputs)?);
    Ok(hex::encode(hasher.finalize())[..16].to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
