//! Binary checkpoint container.
//!
//! ```text
//! "FRCK"  version:u8  count:u32
//! repeated count times:
//!   name_len:u32  name:[u8; name_len]  dtype:u8  dims:[u32; 4]  values
//! ```
//!
//! All integers and values are little-endian. `dtype` is 0 for `f32`, 1 for
//! `f64` and 2 for raw bytes (`dims = [len, 1, 1, 1]`), which carries text
//! metadata such as configs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::arch::params::{EntryKind, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FRCK";
pub const VERSION: u8 = 1;
pub const DTYPE_BYTES: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T> {
    Tensor(Tensor<T>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub name: String,
    pub payload: Payload<T>,
}

impl<T: Scalar> Record<T> {
    pub fn tensor(name: impl Into<String>, t: Tensor<T>) -> Self {
        Record {
            name: name.into(),
            payload: Payload::Tensor(t),
        }
    }

    pub fn bytes(name: impl Into<String>, b: impl Into<Vec<u8>>) -> Self {
        Record {
            name: name.into(),
            payload: Payload::Bytes(b.into()),
        }
    }
}

pub fn encode<T: Scalar>(records: &[Record<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        match &r.payload {
            Payload::Tensor(t) => {
                out.push(T::DTYPE);
                for d in t.shape().dims() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    v.write_le(&mut out);
                }
            }
            Payload::Bytes(b) => {
                out.push(DTYPE_BYTES);
                for d in [b.len(), 1, 1, 1] {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                out.extend_from_slice(b);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(buf: &[u8]) -> Result<Vec<Record<T>>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic bytes {magic:?}, not a checkpoint"
        )));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("record {i} name is not UTF-8")))?
            .to_string();
        let dtype = r.take(1, "dtype")?[0];
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dims")? as usize;
        }
        let payload = if dtype == DTYPE_BYTES {
            Payload::Bytes(r.take(dims[0], &name)?.to_vec())
        } else if dtype == T::DTYPE {
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = r.take(shape.numel() * T::BYTES, &name)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            Payload::Tensor(Tensor::from_vec(shape, data)?)
        } else {
            return Err(Error::Checkpoint(format!(
                "record {name:?} has dtype tag {dtype}, expected {}",
                T::DTYPE
            )));
        };
        records.push(Record { name, payload });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last record",
            buf.len() - r.pos
        )));
    }
    Ok(records)
}

/// Write via a temporary file and rename so readers never see a partial
/// checkpoint.
pub fn write_file<T: Scalar>(path: &Path, records: &[Record<T>]) -> Result<()> {
    let bytes = encode(records);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: Scalar>(path: &Path) -> Result<Vec<Record<T>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// `prefix/<name>` records for every entry.
pub fn params_to_records<T: Scalar>(prefix: &str, params: &ModelParams<T>) -> Vec<Record<T>> {
    params
        .entries()
        .iter()
        .map(|e| Record::tensor(format!("{prefix}/{}", e.name), e.tensor.detached()))
        .collect()
}

/// Fill `target` (which fixes names, kinds and shapes) from `prefix/<name>`
/// records.
pub fn params_from_records<T: Scalar>(
    prefix: &str,
    records: &[Record<T>],
    target: &mut ModelParams<T>,
) -> Result<()> {
    let mut loaded = ModelParams::new();
    let pre = format!("{prefix}/");
    for r in records {
        if let Some(name) = r.name.strip_prefix(&pre) {
            let Payload::Tensor(t) = &r.payload else {
                return Err(Error::Checkpoint(format!("{:?} is not a tensor", r.name)));
            };
            let kind = target
                .entries()
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.kind)
                .unwrap_or(EntryKind::Param);
            loaded.push(name, t.clone(), kind)?;
        }
    }
    target.check_layout(&loaded)?;
    for e in target.entries_mut() {
        e.tensor = loaded.get(&e.name).expect("layout checked").clone();
    }
    Ok(())
}

pub fn find_bytes<'a, T>(records: &'a [Record<T>], name: &str) -> Result<&'a [u8]> {
    records
        .iter()
        .find(|r| r.name == name)
        .and_then(|r| match &r.payload {
            Payload::Bytes(b) => Some(b.as_slice()),
            Payload::Tensor(_) => None,
        })
        .ok_or_else(|| Error::Checkpoint(format!("missing metadata record {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Record<f32>> {
        vec![
            Record::bytes("meta/config", "a = 1"),
            Record::tensor(
                "g/w",
                Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap(),
            ),
        ]
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"FRCK");
        assert_eq!(bytes[4], VERSION);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 11);
        assert_eq!(&bytes[13..24], b"meta/config");
        assert_eq!(bytes[24], DTYPE_BYTES);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let recs = sample();
        let back: Vec<Record<f32>> = decode(&encode(&recs)).unwrap();
        assert_eq!(back, recs);
        let Payload::Tensor(t) = &back[1].payload else { panic!() };
        assert!(t.data()[1].is_sign_negative());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        let err = decode::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        let err = decode::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = encode(&sample());
        for cut in [3, 8, 20, bytes.len() - 1] {
            let err = decode::<f32>(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{cut}: {err}");
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = encode(&sample());
        assert!(decode::<f64>(&bytes).is_err());
    }
}
