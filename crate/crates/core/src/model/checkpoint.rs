//! `SMCK` checkpoint files.
//!
//! Layout (little-endian): magic `"SMCK"`, `u32` version, `u32` length +
//! JSON header, then parameter records until end of file. Each record is a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` × `u32` dims, and
//! the `f64` values.

use super::config::ModelConfig;
use super::params::ParamStore;
use crate::cqi::CqiConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SMCK";
pub const VERSION: u32 = 1;

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub input_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqi: Option<CqiConfig>,
    /// Training bookkeeping (step, seed, policy), owned by the trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    /// Adam first and second moments, shaped like `params`.
    pub moments: Option<(ParamStore, ParamStore)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)
            .map_err(|e| Error::format("header", e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut write = |name: &str, t: &Tensor| -> Result<()> {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::format("record.name", format!("`{name}` is too long")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            Ok(())
        };
        for (n, t) in self.params.iter() {
            write(n, t)?;
        }
        if let Some((m, v)) = &self.moments {
            for (n, t) in m.iter() {
                write(&format!("{ADAM_M}{n}"), t)?;
            }
            for (n, t) in v.iter() {
                write(&format!("{ADAM_V}{n}"), t)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(
                "magic",
                format!("expected \"SMCK\", found {:?}", String::from_utf8_lossy(magic)),
            ));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let len = r.u32("header_length")? as usize;
        let json = r.take(len, "header")?;
        let header: CheckpointHeader =
            serde_json::from_slice(json).map_err(|e| Error::format("header", e.to_string()))?;
        let mut params = ParamStore::new();
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        while !r.done() {
            let nlen = u16::from_le_bytes(r.take(2, "record.name_length")?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(nlen as usize, "record.name")?)
                .map_err(|_| Error::format("record.name", "not UTF-8"))?
                .to_string();
            let rank = r.take(1, "record.rank")?[0] as usize;
            if rank == 0 {
                return Err(Error::format("record.rank", format!("`{name}` has rank 0")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("record.dims")? as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 8, "record.values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, data)
                .map_err(|e| Error::format("record.values", format!("`{name}`: {e}")))?;
            let (store, key) = if let Some(rest) = name.strip_prefix(ADAM_M) {
                (&mut m, rest.to_string())
            } else if let Some(rest) = name.strip_prefix(ADAM_V) {
                (&mut v, rest.to_string())
            } else {
                (&mut params, name)
            };
            store
                .insert(key, t)
                .map_err(|e| Error::format("record.name", e.to_string()))?;
        }
        let moments = if m.is_empty() && v.is_empty() {
            None
        } else {
            Some((m, v))
        };
        Ok(Checkpoint {
            header,
            params,
            moments,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

/// Header of an `SMCK` file without loading its records.
pub fn read_header(bytes: &[u8]) -> Result<(u32, CheckpointHeader)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format("magic", "not an SMCK file"));
    }
    let version = r.u32("version")?;
    let len = r.u32("header_length")? as usize;
    let json = r.take(len, "header")?;
    let header = serde_json::from_slice(json).map_err(|e| Error::format("header", e.to_string()))?;
    Ok((version, header))
}
