//! Small file helpers shared by the on-disk formats.
//!
//! Every binary payload is a flat array of little-endian `f32`. Metadata
//! lives in a JSON sidecar with the same stem (`foo.f32` / `foo.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn encode_f32_le<I: IntoIterator<Item = f32>>(values: I) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn decode_f32_le(path: &Path, bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32_le(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    fs::write(path, encode_f32_le(values)).map_err(io_err(path))
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_f32_le(path, &bytes)
}

/// Splits a path into the `(data, sidecar)` pair. Accepts either member
/// of the pair or a bare stem.
pub fn sidecar_pair(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("f32") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("f32"), with("json"))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_pair_accepts_either_member() {
        let (d, j) = sidecar_pair(Path::new("out/vol.json"));
        assert_eq!(d, PathBuf::from("out/vol.f32"));
        assert_eq!(j, PathBuf::from("out/vol.json"));
        let (d2, j2) = sidecar_pair(Path::new("out/vol"));
        assert_eq!((d2, j2), (d, j));
    }

    #[test]
    fn odd_length_payload_is_rejected() {
        assert!(decode_f32_le(Path::new("x"), &[0, 1, 2]).is_err());
    }
}
