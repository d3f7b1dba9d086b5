//! Content-addressed run manifests.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_hash: String,
    /// path (relative to the config directory when possible) -> sha256
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects the files a run touched, then hashes them all at the end.
pub struct Recorder {
    base: PathBuf,
    subcommand: String,
    config_hash: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(base: &Path, subcommand: &str, config_hash: &str) -> Self {
        Self {
            base: base.to_path_buf(),
            subcommand: subcommand.into(),
            config_hash: config_hash.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn hash_all(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
        paths
            .iter()
            .map(|p| {
                let h = sha256_file(p).map_err(|e| CliError::Pipeline(format!("hashing {}: {e}", p.display())))?;
                Ok((self.label(p), h))
            })
            .collect()
    }

    /// Writes `manifest-{subcommand}.json` into `dir`.
    pub fn finish(self, dir: &Path) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            subcommand: self.subcommand.clone(),
            config_hash: self.config_hash.clone(),
            inputs: self.hash_all(&self.inputs)?,
            outputs: self.hash_all(&self.outputs)?,
        };
        let path = dir.join(format!("manifest-{}.json", self.subcommand));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
