//! `SMC1` dataset files.
//!
//! Little-endian layout:
//!
//! | bytes | field      | value                         |
//! |-------|------------|-------------------------------|
//! | 4     | `magic`    | `"SMC1"`                      |
//! | 4     | `version`  | `u32` = 1                     |
//! | 4     | `count`    | `u32` sample count `T`        |
//! | 2     | `n_t`      | `u16`                         |
//! | 2     | `n_c`      | `u16`                         |
//! | 4     | `reserved` | `u32` = 0                     |
//!
//! followed by `T·N_t·N_c` complex entries as `(re f32, im f32)`, sample-major,
//! antenna-major, subcarrier-minor, and optionally a `u32` length-prefixed
//! JSON metadata block.

use crate::channel::{ChannelMatrix, ScenarioConfig};
use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SMC1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario: Option<ScenarioConfig>,
    /// Run-length encoded split tags, in sample order.
    #[serde(default)]
    pub splits: Vec<(Split, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_t: usize,
    pub n_c: usize,
    pub samples: Vec<ChannelMatrix>,
    pub splits: Vec<Split>,
    pub scenario: Option<ScenarioConfig>,
}

/// Header fields of an `SMC1` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub count: u32,
    pub n_t: u16,
    pub n_c: u16,
}

impl Dataset {
    pub fn new(n_t: usize, n_c: usize, samples: Vec<ChannelMatrix>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|h| h.dims() != (n_t, n_c)) {
            return Err(Error::Dimension(format!(
                "dataset is {n_t}x{n_c} but a sample is {:?}",
                bad.dims()
            )));
        }
        let splits = vec![Split::Train; samples.len()];
        Ok(Dataset {
            n_t,
            n_c,
            samples,
            splits,
            scenario: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Tags the first `train` fraction as train, the next `val` fraction as val
    /// and the remainder as test.
    pub fn assign_splits(&mut self, train: f64, val: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
            return Err(Error::Config(format!(
                "split fractions train={train}, val={val} are invalid"
            )));
        }
        let n = self.len();
        let n_train = (train * n as f64).round() as usize;
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        self.splits = (0..n)
            .map(|i| {
                if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect();
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn subset(&self, split: Split) -> Vec<&ChannelMatrix> {
        self.indices(split).into_iter().map(|i| &self.samples[i]).collect()
    }

    fn metadata(&self) -> Metadata {
        let mut runs: Vec<(Split, usize)> = Vec::new();
        for &s in &self.splits {
            match runs.last_mut() {
                Some((t, n)) if *t == s => *n += 1,
                _ => runs.push((s, 1)),
            }
        }
        Metadata {
            scenario: self.scenario.clone(),
            splits: runs,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.len() * self.n_t * self.n_c * 8
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.len())
            .map_err(|_| Error::format("count", "more than u32::MAX samples"))?;
        let n_t = u16::try_from(self.n_t).map_err(|_| Error::format("n_t", "exceeds u16"))?;
        let n_c = u16::try_from(self.n_c).map_err(|_| Error::format("n_c", "exceeds u16"))?;
        let meta = serde_json::to_vec(&self.metadata())
            .map_err(|e| Error::format("metadata", e.to_string()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload_len() + 4 + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&n_t.to_le_bytes());
        out.extend_from_slice(&n_c.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for h in &self.samples {
            for z in h.as_slice() {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let (n_t, n_c) = (header.n_t as usize, header.n_c as usize);
        let count = header.count as usize;
        let payload = count * n_t * n_c * 8;
        let body = &bytes[HEADER_LEN..];
        if body.len() < payload {
            return Err(Error::format(
                "payload",
                format!("expected {payload} bytes, found {}", body.len()),
            ));
        }
        let mut samples = Vec::with_capacity(count);
        for chunk in body[..payload].chunks_exact((n_t * n_c * 8).max(1)).take(count) {
            let data = chunk
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                    let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                    Complex64::new(re as f64, im as f64)
                })
                .collect();
            samples.push(ChannelMatrix::new(n_t, n_c, data)?);
        }
        let rest = &body[payload..];
        let meta = match rest.len() {
            0 => Metadata::default(),
            1..=3 => return Err(Error::format("metadata_length", "truncated length prefix")),
            _ => {
                let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
                if rest.len() - 4 != len {
                    return Err(Error::format(
                        "metadata",
                        format!("length prefix says {len} bytes, found {}", rest.len() - 4),
                    ));
                }
                serde_json::from_slice(&rest[4..])
                    .map_err(|e| Error::format("metadata", e.to_string()))?
            }
        };
        let mut splits = Vec::with_capacity(count);
        for (s, n) in &meta.splits {
            splits.extend(std::iter::repeat_n(*s, *n));
        }
        if splits.is_empty() {
            splits = vec![Split::Train; count];
        } else if splits.len() != count {
            return Err(Error::format(
                "metadata.splits",
                format!("tags cover {} samples, header says {count}", splits.len()),
            ));
        }
        Ok(Dataset {
            n_t,
            n_c,
            samples,
            splits,
            scenario: meta.scenario,
        })
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        let field = match bytes.len() {
            0..4 => "magic",
            4..8 => "version",
            8..12 => "count",
            12..14 => "n_t",
            14..16 => "n_c",
            _ => "reserved",
        };
        return Err(Error::format(field, "file truncated inside header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected \"SMC1\", found {:?}", String::from_utf8_lossy(&bytes[0..4])),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let reserved = u32_at(16);
    if reserved != 0 {
        return Err(Error::format("reserved", format!("must be 0, found {reserved}")));
    }
    let header = Header {
        version,
        count: u32_at(8),
        n_t: u16_at(12),
        n_c: u16_at(14),
    };
    if header.n_t == 0 || header.n_c == 0 {
        return Err(Error::format("n_t", "dimensions must be positive"));
    }
    Ok(header)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ds.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_bytes(&fs::read(path)?)
}
