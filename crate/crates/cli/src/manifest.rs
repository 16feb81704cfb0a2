//! Per-run provenance record written next to every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use hybrid_mt::error::Result;

/// SHA-256 of `blob <len>\0<bytes>`, the object hash git uses for files in
/// SHA-256 repositories.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input file path to content hash. Directories are expanded to their
    /// regular files (manifests excluded).
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wallclock_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wallclock_secs: 0.0,
            started: Some(Instant::now()),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            for p in entries {
                let is_manifest = p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("manifest.json"));
                if p.is_file() && !is_manifest {
                    self.input(&p)?;
                }
            }
        } else {
            let bytes = fs::read(path)?;
            self.inputs.insert(path.display().to_string(), blob_hash(&bytes));
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        if let Some(t) = self.started {
            self.wallclock_secs = t.elapsed().as_secs_f64();
        }
        fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

/// `<file>.manifest.json` next to a single-file artifact.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
