//! Checkpoint file: a little-endian binary with a JSON header.
//!
//! Layout: 8-byte LE header length, the header JSON, then the raw f64 LE
//! parameter arrays. Group byte offsets in the header are relative to the
//! start of the data section (right after the header).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SceneBounds;
use crate::model::{Model, ModelConfig};

pub const FORMAT_TAG: &str = "endopbr.checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderGroup {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    step: u64,
    config: ModelConfig,
    bounds: SceneBounds,
    groups: Vec<HeaderGroup>,
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        step: model.store.step(),
        config: model.cfg,
        bounds: model.bounds,
        groups: model
            .store
            .groups()
            .iter()
            .map(|g| HeaderGroup {
                name: g.name.clone(),
                shape: g.shape.clone(),
                byte_offset: (g.offset * 8) as u64,
                len: g.len,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + header_json.len() + model.store.len() * 8);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for v in model.store.all_values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn parse_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::CheckpointParse {
        offset,
        msg: msg.into(),
    }
}

/// Byte offset of a serde_json (line, column) position within `text`.
fn json_pos_to_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut seen_lines = 1usize;
    for (i, &b) in text.iter().enumerate() {
        if seen_lines == line {
            return (i + column.saturating_sub(1)) as u64;
        }
        if b == b'\n' {
            seen_lines += 1;
        }
    }
    text.len() as u64
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(parse_err(0, "file too short for the 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if header_len.saturating_add(8) > bytes.len() {
        return Err(parse_err(
            0,
            format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ),
        ));
    }
    let header_bytes = &bytes[8..8 + header_len];
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| {
        parse_err(
            8 + json_pos_to_offset(header_bytes, e.line(), e.column()),
            format!("bad header JSON: {e}"),
        )
    })?;
    if header.format != FORMAT_TAG {
        return Err(parse_err(8, format!("unknown format tag '{}'", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(
            8,
            format!("unsupported version {}", header.version),
        ));
    }

    let mut model = Model::new(header.config, header.bounds, 0)?;
    let expected = model.store.groups().to_vec();
    if expected.len() != header.groups.len() {
        return Err(parse_err(
            8,
            format!(
                "header lists {} groups, config implies {}",
                header.groups.len(),
                expected.len()
            ),
        ));
    }
    let data = &bytes[8 + header_len..];
    for (meta, hg) in expected.iter().zip(&header.groups) {
        if meta.name != hg.name || meta.shape != hg.shape || meta.len != hg.len {
            return Err(parse_err(
                8,
                format!(
                    "group '{}' (shape {:?}) does not match expected '{}' (shape {:?})",
                    hg.name, hg.shape, meta.name, meta.shape
                ),
            ));
        }
        let start = hg.byte_offset as usize;
        let end = start + hg.len * 8;
        if end > data.len() {
            return Err(parse_err(
                (8 + header_len + start) as u64,
                format!("group '{}' data runs past end of file", hg.name),
            ));
        }
        let dst = &mut model.store.all_values_mut()[meta.offset..meta.offset + meta.len];
        for (i, chunk) in data[start..end].chunks_exact(8).enumerate() {
            dst[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    model.store.set_step(header.step);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashgrid::HashGridConfig;
    use nalgebra::Vector3;

    fn small_model() -> Model {
        let cfg = ModelConfig {
            grid: HashGridConfig {
                levels: 3,
                features_per_level: 2,
                table_size: 1 << 8,
                base_resolution: 4,
                finest_resolution: 16,
            },
            ..ModelConfig::default()
        };
        let bounds = SceneBounds {
            min_corner: Vector3::new(-0.3, -0.2, 0.1),
            max_corner: Vector3::new(0.4, 0.5, 1.2),
        };
        Model::new(cfg, bounds, 99).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let mut model = small_model();
        model.store.set_step(42);
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.store.all_values(), model.store.all_values());
        assert_eq!(back.store.step(), 42);
        assert_eq!(back.cfg, model.cfg);
        assert_eq!(back.bounds, model.bounds);
    }

    #[test]
    fn corrupted_header_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let model = small_model();
        save(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[12] = b'!'; // stomp inside the JSON header
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::CheckpointParse { offset, .. }) => assert!(offset >= 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        fs::write(&path, [1, 2, 3]).unwrap();
        match load(&path) {
            Err(Error::CheckpointParse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
