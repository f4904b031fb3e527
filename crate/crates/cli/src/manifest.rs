use std::path::{Path, PathBuf};

use pkb::PkbError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> pkb::Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PkbError::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Run record written next to every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[PathBuf]) -> pkb::Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seed,
            ingest: None,
            inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<pkb::Result<_>>()?,
            outputs: Vec::new(),
        })
    }

    pub fn with_report(mut self, report: serde_json::Value) -> Self {
        self.ingest = Some(report);
        self
    }

    pub fn add_outputs<P: AsRef<Path>>(&mut self, paths: impl IntoIterator<Item = P>) -> pkb::Result<()> {
        for p in paths {
            self.outputs.push(FileDigest::of(p.as_ref())?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> pkb::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| PkbError::io(&path, e))
    }
}
