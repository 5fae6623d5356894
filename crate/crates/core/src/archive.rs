//! Self-describing, versioned binary archive: a JSON header (manifest and
//! array table) followed by little-endian f64 payloads and a SHA-256 trailer.
//!
//! Layout: `MAGIC | u64 header_len | header JSON | f64 data | sha256`.
//! The digest covers every byte before it; a truncated or altered file is
//! rejected before any field is interpreted.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMCSEAR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedArray {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    manifest: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub manifest: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Archive {
    pub fn new(manifest: serde_json::Value) -> Self {
        Archive {
            manifest,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) {
        self.arrays.push(NamedArray::new(name, shape, data.to_vec()));
    }

    /// Remove and return the array named `name`, checking its shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let pos = self
            .arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))?;
        let arr = self.arrays.remove(pos);
        if arr.shape != shape {
            return Err(Error::Checkpoint(format!(
                "array {name:?} has shape {:?}, expected {shape:?}",
                arr.shape
            )));
        }
        Ok(arr.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            manifest: self.manifest.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialization");
        let n_values: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n_values + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::Checkpoint(format!("integrity check failed: {m}"));
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(integrity("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(integrity("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(integrity("digest mismatch (truncated or corrupt payload)"));
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| integrity("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "archive version {} not supported (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let mut data = &body[header_end..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            if data.len() < 8 * n {
                return Err(integrity("payload shorter than array table"));
            }
            let (chunk, rest) = data.split_at(8 * n);
            let values = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray::new(entry.name, entry.shape, values));
            data = rest;
        }
        if !data.is_empty() {
            return Err(integrity("trailing payload bytes"));
        }
        Ok(Archive {
            manifest: header.manifest,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::corpus::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new(serde_json::json!({"kind": "toy", "seed": 3}));
        a.push("w", vec![2, 3], &[1.0, -2.5, f64::MIN_POSITIVE, 0.1, 1e300, -0.0]);
        a.push("b", vec![2], &[0.3, 0.7]);
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample();
        let b = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a.manifest, b.manifest);
        for (x, y) in a.arrays.iter().zip(&b.arrays) {
            assert_eq!(x.name, y.name);
            let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn truncated_or_flipped_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Archive::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("integrity"), "{err}");
        }
        let mut flipped = bytes.clone();
        let i = flipped.len() - 40;
        flipped[i] ^= 1;
        assert!(Archive::from_bytes(&flipped).is_err());
    }

    #[test]
    fn take_checks_shape() {
        let mut a = sample();
        assert!(a.take("w", &[3, 2]).is_err());
        let mut a2 = sample();
        assert_eq!(a2.take("b", &[2]).unwrap(), vec![0.3, 0.7]);
        assert!(a2.take("b", &[2]).is_err());
    }
}
