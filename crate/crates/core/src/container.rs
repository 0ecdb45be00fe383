//! Little-endian binary container for named tensors and text blobs, shared
//! by model checkpoints, backend model files, and binary embedding archives
//! (each with its own magic). Layout:
//!
//! ```text
//! magic            4 bytes
//! version          u32
//! entry count      u32
//! per entry:
//!   name length    u32, then UTF-8 name bytes
//!   kind           u8   (0 = text, 1 = f64 tensor)
//!   text payload:  length u32, then bytes
//!   tensor payload: rank u32, dims (u32 each), values (f64 each)
//! checksum         u64  FNV-1a over every preceding byte
//! ```

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;

/// FNV-1a over a byte slice; the trailing-checksum function for every binary
/// format in this crate.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Write a file atomically: contents land in a temp sibling first and are
/// renamed onto the destination only once fully written, so a failed run
/// never leaves a partial primary output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Text(String),
    Tensor { shape: Vec<usize>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub payload: Payload,
}

/// In-memory container; serialize with [`Container::to_bytes`] /
/// [`Container::write_to`], load with [`Container::read_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(magic: [u8; 4]) -> Self {
        Container { magic, entries: Vec::new() }
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.entries.push(Entry { name: name.into(), payload: Payload::Text(text.into()) });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push(Entry { name: name.into(), payload: Payload::Tensor { shape, values } });
    }

    pub fn get(&self, name: &str) -> Option<&Payload> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.payload)
    }

    pub fn get_text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Payload::Text(t)) => Ok(t),
            Some(_) => Err(Error::Config(format!("entry {name:?} is not text"))),
            None => Err(Error::Config(format!("container has no entry {name:?}"))),
        }
    }

    pub fn get_tensor(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(Payload::Tensor { shape, values }) => Ok((shape, values)),
            Some(_) => Err(Error::Config(format!("entry {name:?} is not a tensor"))),
            None => Err(Error::Config(format!("container has no entry {name:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for entry in &self.entries {
            out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
            out.extend_from_slice(entry.name.as_bytes());
            match &entry.payload {
                Payload::Text(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.len() as u32).to_le_bytes());
                    out.extend_from_slice(t.as_bytes());
                }
                Payload::Tensor { shape, values } => {
                    out.push(1);
                    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                    for &d in shape {
                        out.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Container> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != expected_magic {
            return Err(Error::BadMagic {
                expected: expected_magic,
                found: [magic[0], magic[1], magic[2], magic[3]],
            });
        }
        let version = cur.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Truncated("entry name is not UTF-8".into()))?;
            let kind = cur.u8()?;
            let payload = match kind {
                0 => {
                    let len = cur.u32()? as usize;
                    let text = String::from_utf8(cur.take(len)?.to_vec())
                        .map_err(|_| Error::Truncated("text entry is not UTF-8".into()))?;
                    Payload::Text(text)
                }
                1 => {
                    let rank = cur.u32()? as usize;
                    let mut shape = Vec::with_capacity(rank.min(16));
                    for _ in 0..rank {
                        shape.push(cur.u32()? as usize);
                    }
                    let numel: usize = shape.iter().product();
                    if cur.remaining() < numel.saturating_mul(8) {
                        return Err(Error::Truncated(format!(
                            "tensor {name:?} declares {numel} values past end of file"
                        )));
                    }
                    let mut values = Vec::with_capacity(numel);
                    for _ in 0..numel {
                        values.push(cur.f64()?);
                    }
                    Payload::Tensor { shape, values }
                }
                other => {
                    return Err(Error::Truncated(format!("unknown entry kind {other}")));
                }
            };
            entries.push(Entry { name, payload });
        }
        if cur.remaining() < 8 {
            return Err(Error::Truncated("missing trailing checksum".into()));
        }
        let body_len = cur.pos;
        let stored = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        let computed = fnv1a64(&bytes[..body_len]);
        if stored != computed || cur.remaining() != 0 {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(Container { magic: expected_magic, entries })
    }

    pub fn read_from(path: &Path, expected_magic: [u8; 4]) -> Result<Container> {
        let bytes = std::fs::read(path)?;
        Container::from_bytes(&bytes, expected_magic)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes at offset {}, file holds {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(*b"TEST");
        c.push_text("config", "name = MP\n");
        c.push_tensor("w", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.0]);
        c.push_tensor("scalar", vec![], vec![42.0]);
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes, *b"TEST").unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn bad_magic_detected() {
        let bytes = sample().to_bytes();
        match Container::from_bytes(&bytes, *b"ELSE") {
            Err(Error::BadMagic { expected, found }) => {
                assert_eq!(&expected, b"ELSE");
                assert_eq!(&found, b"TEST");
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 9, 10, 5] {
            match Container::from_bytes(&bytes[..cut], *b"TEST") {
                Err(Error::Truncated(_)) => {}
                other => panic!("cut at {cut}: expected Truncated, got {other:?}"),
            }
        }
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            Container::from_bytes(&bytes, *b"TEST"),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn version_check() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 99;
        assert!(matches!(
            Container::from_bytes(&bytes, *b"TEST"),
            Err(Error::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second-longer").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second-longer");
        assert!(!path.with_extension("bin.tmp").exists());
    }
}
