use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// File name to sha256, relative to the data directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
    /// True when the outputs of an earlier run were reused.
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        Self { tool: "spinelink".into(), version: env!("CARGO_PKG_VERSION").into(), config, stages: Vec::new() }
    }

    /// `None` when the file is missing or unreadable.
    pub fn load(path: &Path) -> Option<Self> {
        serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(s) => *s = record,
            None => self.stages.push(record),
        }
    }

    /// Every recorded output exists under `root` with its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<(), String> {
        for s in &self.stages {
            for (name, hash) in &s.outputs {
                let got = sha256_file(&root.join(name)).map_err(|e| format!("{name}: {e}"))?;
                if &got != hash {
                    return Err(format!("{name}: hash {got} differs from recorded {hash}"));
                }
            }
        }
        Ok(())
    }
}
