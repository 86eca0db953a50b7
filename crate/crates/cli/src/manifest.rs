//! Run manifests, file hashing and JSON-lines helpers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation. Paths are relative to the output root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub deterministic: bool,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_s: f64,
    pub metrics: serde_json::Value,
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    root: PathBuf,
    command: String,
    config_sha256: String,
    seed: u64,
    deterministic: bool,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(root: &Path, command: &str, config_toml: &str, seed: u64, deterministic: bool) -> Self {
        Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config_sha256: sha256_bytes(config_toml.as_bytes()),
            seed,
            deterministic,
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    fn entry(&self, path: &Path) -> Result<FileHash> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        Ok(FileHash { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_file(path)? })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path)?;
        self.inputs.push(e);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path)?;
        self.outputs.push(e);
        Ok(())
    }

    /// A digest standing in for many files, such as a directory of images.
    pub fn output_digest(&mut self, label: &str, sha256: String) {
        self.outputs.push(FileHash { path: label.to_string(), sha256 });
    }

    pub fn finish(self, dir: &Path, metrics: serde_json::Value) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            config_sha256: self.config_sha256,
            seed: self.seed,
            deterministic: self.deterministic,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            metrics,
        };
        write_json(&dir.join(format!("{}.json", m.command)), &m)?;
        Ok(m)
    }
}
