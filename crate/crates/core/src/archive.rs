//! Versioned binary tensor archive used for checkpoints and quantized models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TARC" | version u32 | count u32 | record*
//! record = name_len u32 | name utf-8 | dtype u8 | rank u32 | dims u64*rank
//!          | [i8 only: scale f64 | zero_point i32] | payload
//! ```
//!
//! dtype tags: 0 = f64, 1 = f32, 2 = i8, 3 = raw bytes (u8).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TARC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I8 {
        values: Vec<i8>,
        scale: f64,
        zero_point: i32,
    },
    Bytes(Vec<u8>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F64(_) => 0,
            Payload::F32(_) => 1,
            Payload::I8 { .. } => 2,
            Payload::Bytes(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::I8 { values, .. } => values.len(),
            Payload::Bytes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<Entry>,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, payload: Payload) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != payload.len() {
            return format_err(format!("entry {name}: shape {shape:?} does not match {} values", payload.len()));
        }
        self.entries.push(Entry { name, shape, payload });
        Ok(())
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) -> Result<()> {
        let n = bytes.len();
        self.push(name, vec![n], Payload::Bytes(bytes))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn text(&self, name: &str) -> Option<String> {
        match &self.get(name)?.payload {
            Payload::Bytes(b) => String::from_utf8(b.clone()).ok(),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.tag());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I8 {
                    values,
                    scale,
                    zero_point,
                } => {
                    out.extend_from_slice(&scale.to_le_bytes());
                    out.extend_from_slice(&zero_point.to_le_bytes());
                    out.extend(values.iter().map(|&x| x as u8));
                }
                Payload::Bytes(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return format_err("bad archive magic");
        }
        let version = r.u32()?;
        if version != VERSION {
            return format_err(format!("unsupported archive version {version}"));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = match tag {
                0 => Payload::F64(r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => Payload::F32(r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => {
                    let scale = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    let zero_point = i32::from_le_bytes(r.take(4)?.try_into().unwrap());
                    let values = r.take(n)?.iter().map(|&b| b as i8).collect();
                    Payload::I8 {
                        values,
                        scale,
                        zero_point,
                    }
                }
                3 => Payload::Bytes(r.take(n)?.to_vec()),
                other => return format_err(format!("unknown dtype tag {other} for {name}")),
            };
            entries.push(Entry { name, shape, payload });
        }
        if r.pos != bytes.len() {
            return format_err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => format_err(format!("archive truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(any::<f64>(), 0..40),
            ints in prop::collection::vec(any::<i8>(), 1..20),
            scale in any::<f64>(),
            zp in any::<i32>(),
            name in "[a-z_.0-9]{1,12}",
        ) {
            let mut a = Archive::new();
            a.push(name.clone(), vec![values.len()], Payload::F64(values.clone())).unwrap();
            let n = ints.len();
            a.push("q", vec![1, n], Payload::I8 { values: ints, scale, zero_point: zp }).unwrap();
            a.push("f", vec![2], Payload::F32(vec![1.5, -0.0])).unwrap();
            a.push_bytes("meta", b"hash".to_vec()).unwrap();
            let bytes = a.to_bytes();
            let b = Archive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(b.to_bytes(), bytes);
            match (&a.entries[0].payload, &b.entries[0].payload) {
                (Payload::F64(x), Payload::F64(y)) => {
                    prop_assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
                }
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut a = Archive::new();
        a.push("w", vec![2], Payload::F64(vec![1.0, 2.0])).unwrap();
        let bytes = a.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Archive::from_bytes(&bad).is_err());
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Archive::from_bytes(&extra).is_err());
        assert!(a.push("bad", vec![3], Payload::F64(vec![0.0])).is_err());
    }
}
