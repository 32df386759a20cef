use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::Model;
use super::spec::ModelSpec;
use super::train::EpochRecord;
use crate::error::{Error, Result};

const FORMAT: &str = "localglobal-model/1";

/// JSON side of a checkpoint. The parameters live in a sibling file of raw
/// little-endian `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub spec: ModelSpec,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub param_count: usize,
    pub payload: String,
    pub payload_sha256: String,
}

fn payload_path(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

/// Writes `<path>` (manifest) and `<path stem>.bin` (parameters).
pub fn save_checkpoint(model: &Model, seed: u64, path: &Path) -> Result<CheckpointManifest> {
    let bytes: Vec<u8> = model.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    let name = format!(
        "{}.bin",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("model")
    );
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        spec: model.spec().clone(),
        shapes: model.shapes().to_vec(),
        seed,
        param_count: model.param_count(),
        payload: name.clone(),
        payload_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    std::fs::write(payload_path(path, &name), &bytes)?;
    std::fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointManifest)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::MalformedHeader(format!("unknown checkpoint format {}", manifest.format)));
    }
    let payload = payload_path(path, &manifest.payload);
    if !payload.exists() {
        return Err(Error::MissingFile(payload));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(&payload)?.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * manifest.param_count {
        return Err(Error::SizeMismatch {
            expected: 4 * manifest.param_count,
            found: bytes.len(),
        });
    }
    if hex::encode(Sha256::digest(&bytes)) != manifest.payload_sha256 {
        return Err(Error::Data(format!("checkpoint payload {} fails its checksum", payload.display())));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let model = Model::from_params(&manifest.spec, params)?;
    if model.shapes() != manifest.shapes.as_slice() {
        return Err(Error::Data("checkpoint shapes disagree with its spec".into()));
    }
    Ok((model, manifest))
}

pub fn write_history_csv(history: &[EpochRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}

pub fn read_history_csv(r: impl Read) -> Result<Vec<EpochRecord>> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "epoch,train_loss,val_loss" => {}
        _ => return Err(Error::MalformedHeader("history CSV header".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = || Error::Parse(format!("bad history row {line:?}"));
        if f.len() != 3 {
            return Err(parse_err());
        }
        out.push(EpochRecord {
            epoch: f[0].trim().parse().map_err(|_| parse_err())?,
            train_loss: f[1].trim().parse().map_err(|_| parse_err())?,
            val_loss: f[2].trim().parse().map_err(|_| parse_err())?,
        });
    }
    Ok(out)
}
