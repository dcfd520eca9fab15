//! Bit-exact model snapshots, in memory and on disk.
//!
//! File layout: 8-byte magic, u64 little-endian header length, a JSON header
//! (format version, model config, ordered name/shape table), then every
//! parameter value as little-endian f64 in table order. Values survive a
//! save/load cycle bit for bit.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::InitPolicy;

const MAGIC: &[u8; 8] = b"SEGCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    config: ModelConfig,
    params: Vec<ParamEntry>,
    values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// An in-memory copy of every named parameter, used for best-on-validation
/// bookkeeping during training and as the payload of on-disk checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl ParamSnapshot {
    pub fn capture(model: &mut Model) -> ParamSnapshot {
        let mut entries = Vec::new();
        model.visit_params(&mut |name, t| {
            entries.push((name, t.shape.clone(), t.data.clone()));
        });
        ParamSnapshot { entries }
    }

    /// Write the stored values back into `model`. The model must expose
    /// exactly the stored names with the stored shapes.
    pub fn restore(&self, model: &mut Model) -> Result<()> {
        let mut by_name: HashMap<&str, (usize, &Vec<usize>, &Vec<f64>)> = HashMap::new();
        for (i, (name, shape, data)) in self.entries.iter().enumerate() {
            if by_name.insert(name.as_str(), (i, shape, data)).is_some() {
                return Err(Error::format(format!(
                    "snapshot: duplicate parameter {name}"
                )));
            }
        }
        let mut used = vec![false; self.entries.len()];
        let mut failure: Option<Error> = None;
        model.visit_params(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            match by_name.get(name.as_str()) {
                Some((i, shape, data)) => {
                    if t.shape != **shape {
                        failure = Some(Error::format(format!(
                            "snapshot: {name} has shape {:?}, model expects {:?}",
                            shape, t.shape
                        )));
                        return;
                    }
                    t.data.copy_from_slice(data);
                    used[*i] = true;
                }
                None => {
                    failure = Some(Error::format(format!(
                        "snapshot: model parameter {name} missing from snapshot"
                    )));
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::format(format!(
                "snapshot: stored parameter {} not present in model",
                self.entries[i].0
            )));
        }
        Ok(())
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|(_, _, d)| d.len()).sum()
    }
}

/// Save `model` (config and all parameter values) to `path`.
pub fn save(path: &Path, model: &mut Model) -> Result<()> {
    let snapshot = ParamSnapshot::capture(model);
    let header = Header {
        format: FORMAT_VERSION,
        config: model.config().clone(),
        params: snapshot
            .entries
            .iter()
            .map(|(name, shape, _)| ParamEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
        values: snapshot.value_count(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::format(format!("{}: header encode: {e}", path.display())))?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + header.values * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, _, data) in &snapshot.entries {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Load a checkpoint, rebuilding the model from the embedded config and
/// restoring every stored parameter value.
pub fn load(path: &Path) -> Result<Model> {
    let err = |msg: String| Error::format(format!("{}: {msg}", path.display()));
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file".to_string()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|s| *s <= bytes.len());
    let Some(payload_start) = payload_start else {
        return Err(err("truncated header".to_string()));
    };
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| err(format!("bad header: {e}")))?;
    if header.format != FORMAT_VERSION {
        return Err(err(format!("unsupported format version {}", header.format)));
    }
    header.config.validate()?;

    let table_values: usize = header
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if table_values != header.values {
        return Err(err(format!(
            "header declares {} values but shapes sum to {table_values}",
            header.values
        )));
    }
    let payload = &bytes[payload_start..];
    if payload.len() != header.values * 8 {
        return Err(err(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            header.values * 8
        )));
    }

    let mut entries = Vec::with_capacity(header.params.len());
    let mut offset = 0usize;
    for p in header.params {
        let n: usize = p.shape.iter().product();
        let data: Vec<f64> = payload[offset * 8..(offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push((p.name, p.shape, data));
        offset += n;
    }

    let mut model = Model::build(&header.config, InitPolicy { seed: 0 })?;
    ParamSnapshot { entries }.restore(&mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Arch;

    #[test]
    fn snapshot_restore_round_trips_values() {
        let config = ModelConfig::with_arch(Arch::Cnn);
        let mut model = Model::build(&config, InitPolicy { seed: 7 }).unwrap();
        let snap = ParamSnapshot::capture(&mut model);
        let mut other = Model::build(&config, InitPolicy { seed: 8 }).unwrap();
        snap.restore(&mut other).unwrap();
        assert_eq!(snap, ParamSnapshot::capture(&mut other));
    }

    #[test]
    fn restore_rejects_architecture_mismatch() {
        let mut cnn =
            Model::build(&ModelConfig::with_arch(Arch::Cnn), InitPolicy { seed: 1 }).unwrap();
        let mut unet =
            Model::build(&ModelConfig::with_arch(Arch::Unet), InitPolicy { seed: 1 }).unwrap();
        let snap = ParamSnapshot::capture(&mut cnn);
        assert!(snap.restore(&mut unet).is_err());
    }
}
