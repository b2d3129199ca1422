//! Atomic artifact writes and the manifest that accompanies each output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a sibling temporary file, fsync, rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).map_err(err)?;
    f.sync_all().map_err(err)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(err)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Provenance for one output. Output paths are recorded by file name so
/// that identical runs into different directories produce equal manifests.
#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config: Value,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    output: FileDigest,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Value>,
}

pub struct Run {
    pub command: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, config: impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Run { command, config, seed, inputs: Vec::new() })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Records the manifest for `out`, which must already be written.
    pub fn finish(&self, out: &Path, report: Option<Value>) -> Result<(), CliError> {
        let mut inputs = Vec::new();
        for p in &self.inputs {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.is_file())
                    .collect();
                files.sort();
                for f in files {
                    inputs.push(FileDigest { path: f.display().to_string(), sha256: sha256_file(&f)? });
                }
            } else {
                inputs.push(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? });
            }
        }
        let canonical = serde_json::to_vec(&self.config).map_err(|e| CliError::Runtime(e.to_string()))?;
        let manifest = Manifest {
            tool: "ctrltab",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            config: self.config.clone(),
            config_hash: hex::encode(Sha256::digest(&canonical)),
            seed: self.seed,
            inputs,
            output: FileDigest {
                path: out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(out)?,
            },
            report,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        write_atomic(&manifest_path(out), text.as_bytes())
    }
}
