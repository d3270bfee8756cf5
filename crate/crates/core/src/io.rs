//! Shared binary-file plumbing for the checksummed archive formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a sibling temporary file and a rename, so readers see
/// either the old or the new contents.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp-write");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Checks magic, version, and the trailing CRC32; returns the bytes before the CRC.
pub(crate) fn verify_crc<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u8) -> Result<&'a [u8]> {
    if bytes.len() < 9 {
        return Err(Error::CorruptArchive(format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::CorruptArchive("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::CorruptArchive(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    if body[4] != version {
        return Err(Error::CorruptArchive(format!("unsupported version {}", body[4])));
    }
    Ok(body)
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptArchive(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::CorruptArchive("string length overflow".into()))?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptArchive("name is not UTF-8".into()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptArchive("tensor length overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::CorruptArchive(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}
