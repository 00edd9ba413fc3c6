//! LWC1 container: `b"LWC1"`, u64 LE header length, UTF-8 JSON header, then
//! little-endian payload sections. The header is padded with spaces so the
//! payload starts on a 64-byte boundary; section offsets are relative to the
//! payload start and are multiples of 64.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::real::Dtype;

pub const MAGIC: &[u8; 4] = b"LWC1";
pub const ALIGN: usize = 64;
const PREFIX: usize = 12;
const MAX_HEADER: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    entries: Vec<Entry>,
    metadata: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub arrays: Vec<Array>,
    pub metadata: BTreeMap<String, Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Contract(format!(
                "array `{name}`: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::Contract(format!("duplicate array name `{name}`")));
        }
        self.arrays.push(Array {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn push_f32(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.push(name, shape, ArrayData::F32(data))
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.push(name, shape, ArrayData::F64(data))
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Format(format!("metadata `{key}`: {e}")))?;
        self.metadata.insert(key.to_string(), v);
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("metadata `{key}`: {e}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for a in &self.arrays {
            let length = (a.data.len() * a.data.dtype().size()) as u64;
            entries.push(Entry {
                name: a.name.clone(),
                dtype: a.data.dtype(),
                shape: a.shape.clone(),
                offset,
                length,
            });
            offset = align_up(offset + length);
        }
        let header = Header {
            entries,
            metadata: self.metadata.clone(),
        };
        let mut json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        while (PREFIX + json.len()) % ALIGN != 0 {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(PREFIX + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let base = out.len();
        for (a, e) in self.arrays.iter().zip(&header.entries) {
            out.resize(base + e.offset as usize, 0);
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out.resize(base + offset as usize, 0);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an LWC1 container (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        if hlen > MAX_HEADER || PREFIX as u64 + hlen > bytes.len() as u64 {
            return Err(Error::Format(format!("header length {hlen} exceeds file size {}", bytes.len())));
        }
        let base = PREFIX + hlen as usize;
        if base % ALIGN != 0 {
            return Err(Error::Format("payload is not 64-byte aligned".into()));
        }
        let text = std::str::from_utf8(&bytes[PREFIX..base]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        let payload = &bytes[base..];
        let mut arrays = Vec::with_capacity(header.entries.len());
        let mut cursor = 0u64;
        for e in &header.entries {
            let count: usize = e.shape.iter().product();
            let want = count as u64 * e.dtype.size() as u64;
            if e.length != want {
                return Err(Error::Format(format!(
                    "entry `{}`: length {} inconsistent with {:?} {:?}",
                    e.name, e.length, e.dtype, e.shape
                )));
            }
            if e.offset % ALIGN as u64 != 0 || e.offset != align_up(cursor) {
                return Err(Error::Format(format!("entry `{}`: offset {} breaks the section tiling", e.name, e.offset)));
            }
            let end = e.offset.checked_add(e.length).filter(|&v| v <= payload.len() as u64);
            let Some(end) = end else {
                return Err(Error::Format(format!("entry `{}` runs past the end of the file", e.name)));
            };
            let raw = &payload[e.offset as usize..end as usize];
            let data = match e.dtype {
                Dtype::F32 => ArrayData::F32(
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
                ),
                Dtype::F64 => ArrayData::F64(
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                ),
            };
            if arrays.iter().any(|a: &Array| a.name == e.name) {
                return Err(Error::Format(format!("duplicate entry `{}`", e.name)));
            }
            arrays.push(Array {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
            cursor = end;
        }
        if align_up(cursor) != payload.len() as u64 {
            return Err(Error::Format(format!(
                "payload has {} bytes, sections cover {}",
                payload.len(),
                align_up(cursor)
            )));
        }
        Ok(Container {
            arrays,
            metadata: header.metadata,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn align_up(v: u64) -> u64 {
    v.div_ceil(ALIGN as u64) * ALIGN as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push_f32("a", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.0]).unwrap();
        c.push_f64("b", vec![1], vec![std::f64::consts::PI]).unwrap();
        c.set_meta("dx", &10.0).unwrap();
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LWC1");
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        assert_eq!((12 + hlen) % 64, 0);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_inconsistent_length() {
        let bytes = sample().to_bytes().unwrap();
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap().replace("\"length\":24", "\"length\":28");
        let mut forged = bytes[..12].to_vec();
        forged.extend_from_slice(text.as_bytes());
        forged.extend_from_slice(&bytes[12 + hlen..]);
        assert!(matches!(Container::from_bytes(&forged), Err(Error::Format(m)) if m.contains("length")));
    }

    #[test]
    fn shape_mismatch_on_push() {
        let mut c = Container::new();
        assert!(c.push_f64("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
