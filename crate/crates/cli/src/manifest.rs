//! Run manifests: every experiment directory records what produced it
//! before any output is written, so a run is reproducible from the
//! manifest plus the referenced checkpoint and seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mcqa_lens::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced this directory.
    pub command: String,
    /// Full argument vector as invoked.
    pub argv: Vec<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch when the run started.
    pub timestamp_unix: u64,
    /// SHA-256 of the checkpoint actually used, if the command takes one.
    pub checkpoint_sha256: Option<String>,
    /// Input files referenced by the run.
    pub inputs: Vec<String>,
    /// Files the run intends to write (relative to the run directory).
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            checkpoint_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_checkpoint(mut self, path: &Path) -> Result<RunManifest> {
        self.checkpoint_sha256 = Some(sha256_file(path)?);
        self.inputs.push(path.display().to_string());
        Ok(self)
    }

    pub fn with_input(mut self, path: &Path) -> RunManifest {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn with_outputs(mut self, names: &[&str]) -> RunManifest {
        self.outputs.extend(names.iter().map(|s| s.to_string()));
        self
    }

    /// Creates the run directory and writes the manifest into it. Must be
    /// called before any experiment output lands in `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}
