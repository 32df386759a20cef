//! Append-only record of completed stages. A stage is skipped when its last
//! entry has the same input key and every recorded output still hashes to
//! the recorded digest.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEDGER_NAME: &str = "ledger.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub key: String,
    /// Output path (relative to the work dir) to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Hex SHA-256 over length-prefixed parts, so part boundaries matter.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug)]
pub struct Ledger {
    root: PathBuf,
    entries: Mutex<Vec<LedgerEntry>>,
}

impl Ledger {
    /// Loads `<root>/ledger.jsonl` if present.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let path = root.join(LEDGER_NAME);
        let mut entries = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(
                    serde_json::from_str(&line)
                        .map_err(|e| Error::Parse(format!("ledger line {}: {e}", n + 1)))?,
                );
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    /// Whether `stage` completed with `key` and its outputs are intact.
    pub fn is_complete(&self, stage: &str, key: &str) -> bool {
        let entry = {
            let entries = self.entries.lock().expect("ledger lock");
            entries.iter().rev().find(|e| e.stage == stage).cloned()
        };
        match entry {
            Some(e) if e.key == key => e
                .outputs
                .iter()
                .all(|(rel, sha)| file_sha256(&self.root.join(rel)).is_ok_and(|h| &h == sha)),
            _ => false,
        }
    }

    /// Hashes the outputs and appends an entry.
    pub fn record(&self, stage: &str, key: &str, outputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for rel in outputs {
            let name = rel.to_string_lossy().replace('\\', "/");
            map.insert(name, file_sha256(&self.root.join(rel))?);
        }
        let entry = LedgerEntry {
            stage: stage.to_string(),
            key: key.to_string(),
            outputs: map,
        };
        let mut entries = self.entries.lock().expect("ledger lock");
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(LEDGER_NAME))?;
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        entries.push(entry);
        Ok(())
    }
}
