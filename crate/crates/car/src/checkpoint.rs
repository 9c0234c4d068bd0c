//! `CARW` parameter files.
//!
//! Layout, all integers little-endian:
//! `b"CARW"`, `u32` version, `u32` header length, a JSON header
//! `{"kind": ..., "spec": ...}`, `u64` parameter count, then the parameters
//! as `f64`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CarError, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"CARW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new<S: Serialize>(kind: &str, spec: &S, params: Vec<f64>) -> Result<Self> {
        let spec = serde_json::to_value(spec).map_err(|e| CarError::input(e.to_string()))?;
        Ok(Checkpoint {
            header: Header {
                kind: kind.to_string(),
                spec,
            },
            params,
        })
    }

    /// Decodes the spec, checking the kind.
    pub fn spec<S: DeserializeOwned>(&self, kind: &str, path: &Path) -> Result<S> {
        if self.header.kind != kind {
            return Err(CarError::format(
                path,
                format!("expected a {kind} checkpoint, found {}", self.header.kind),
            ));
        }
        serde_json::from_value(self.header.spec.clone()).map_err(|e| CarError::format(path, e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header is plain JSON");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| CarError::format(path, msg.to_string());
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = data.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("not a CARW file"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported CARW version {version}")));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(hlen)?).map_err(|e| bad(&e.to_string()))?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let body = take(count.checked_mul(8).ok_or_else(|| bad("bad parameter count"))?)?;
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if pos != data.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(CarError::Core(car_core::Error::NonFinite("checkpoint parameters")));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read(path).at(path)?;
        Checkpoint::from_bytes(&data, path)
    }
}
