//! On-disk container shared by datasets and model checkpoints: a plain-text
//! header (kind tag plus key=value metadata) followed by length-prefixed
//! binary records. Numeric payloads are little-endian raw bits, so a write
//! followed by a read reproduces every field bit for bit.

use crate::error::{HoilError, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &str = "#hoil v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub records: Vec<Vec<u8>>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            meta: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| HoilError::Parse {
            location: format!("header key `{key}`"),
            message: "missing".to_string(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC} {}\n", self.kind).as_bytes());
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(b"---\n");
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
            out.extend_from_slice(rec);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sep = b"---\n";
        let split = find(bytes, sep).ok_or_else(|| HoilError::Parse {
            location: "header".to_string(),
            message: "missing `---` separator".to_string(),
        })?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|e| HoilError::Parse {
            location: "header".to_string(),
            message: e.to_string(),
        })?;
        let mut lines = header.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| HoilError::Parse {
            location: "line 1".to_string(),
            message: "empty file".to_string(),
        })?;
        let kind = first
            .strip_prefix(MAGIC)
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| HoilError::Parse {
                location: "line 1".to_string(),
                message: format!("expected `{MAGIC} <kind>`, got `{first}`"),
            })?;
        let mut meta = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HoilError::Parse {
                location: format!("line {}", i + 1),
                message: format!("expected key=value, got `{line}`"),
            })?;
            meta.push((k.to_string(), v.to_string()));
        }

        let mut pos = split + sep.len();
        let count = read_u32(bytes, &mut pos)? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(bytes, &mut pos)? as usize;
            if pos + len > bytes.len() {
                return Err(HoilError::Parse {
                    location: format!("byte offset {pos}"),
                    message: format!(
                        "truncated record: need {len} bytes, {} remain",
                        bytes.len() - pos
                    ),
                });
            }
            records.push(bytes[pos..pos + len].to_vec());
            pos += len;
        }
        if pos != bytes.len() {
            return Err(HoilError::Parse {
                location: format!("byte offset {pos}"),
                message: format!("{} trailing bytes after last record", bytes.len() - pos),
            });
        }
        Ok(Container {
            kind,
            meta,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(HoilError::Parse {
            location: format!("byte offset {}", *pos),
            message: "truncated length prefix".to_string(),
        });
    }
    let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

/// Record cursor helpers for packing and unpacking numeric payloads.
pub struct Writer(pub Vec<u8>);

impl Writer {
    pub fn new() -> Self {
        Writer(Vec::new())
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    pub fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for v in vs {
            self.f64(*v);
        }
    }
}

impl Default for Writer {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HoilError::Parse {
                location: format!("record offset {}", self.pos),
                message: format!("truncated field: need {n} bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(
            self.take(8)?.try_into().unwrap(),
        )))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(HoilError::Parse {
                location: format!("record offset {}", self.pos),
                message: "trailing bytes in record".to_string(),
            });
        }
        Ok(())
    }
}
