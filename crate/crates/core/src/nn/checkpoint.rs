//! Parameter checkpoints.
//!
//! Layout: `u64` little-endian header length, a UTF-8 JSON header, then every
//! tensor as little-endian `f32` values. Tensor offsets are in bytes from the
//! start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use super::train::VolumeScale;
use crate::error::{Error, Result};
use crate::io::{decode_f32_le, encode_f32_le, ensure_parent, io_err};

pub const CHECKPOINT_FORMAT: &str = "shellforge-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub scale: VolumeScale,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub scale: VolumeScale,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let specs = self.network.config.param_specs();
        let mut offset = 0;
        let tensors = specs
            .iter()
            .zip(&self.network.params)
            .map(|(s, p)| {
                let e = TensorEntry {
                    name: s.name.clone(),
                    shape: p.shape.clone(),
                    offset,
                };
                offset += 4 * p.len();
                e
            })
            .collect();
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network: self.network.config.clone(),
            scale: self.scale,
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        for p in &self.network.params {
            out.extend(encode_f32_le(p.data.iter().copied()));
        }
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 8 {
            return Err(format("truncated header length".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let json = bytes
            .get(8..8usize.saturating_add(n))
            .ok_or_else(|| format(format!("header length {n} exceeds file size")))?;
        let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(format(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let data = &bytes[8 + n..];
        let specs = header.network.param_specs();
        if specs.len() != header.tensors.len() {
            return Err(format(format!("{} tensors for {} parameters", header.tensors.len(), specs.len())));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (s, e) in specs.iter().zip(&header.tensors) {
            if s.name != e.name {
                return Err(format(format!("expected tensor {}, found {}", s.name, e.name)));
            }
            let len = 4 * e.shape.iter().product::<usize>();
            let raw = data
                .get(e.offset..e.offset.saturating_add(len))
                .ok_or_else(|| format(format!("tensor {} runs past end of file", e.name)))?;
            params.push(Tensor::new(&e.shape, decode_f32_le(path, raw)?)?);
        }
        Ok(Checkpoint {
            network: Network::from_params(header.network, params)?,
            scale: header.scale,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = Network::<f32>::init(NetworkConfig::default(), 4).unwrap();
        let ck = Checkpoint {
            network: net,
            scale: VolumeScale {
                density_scale: 1.5,
                extent: 1.0,
                origin: [0.0, 0.1, 0.0],
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        ck.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), ck);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let net = Network::<f32>::init(NetworkConfig::default(), 4).unwrap();
        let ck = Checkpoint {
            network: net,
            scale: VolumeScale {
                density_scale: 1.0,
                extent: 1.0,
                origin: [0.0; 3],
            },
        };
        let bytes = ck.to_bytes().unwrap();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(p, &bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(p, &bytes[..4]).is_err());
    }
}
