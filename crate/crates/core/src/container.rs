//! Little-endian binary containers: a 4-byte magic, a run of u32 header
//! fields, then a typed payload. Each data type defines its own magic and
//! header layout; this module only handles the byte plumbing.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    pub fn new(mut out: W, magic: &[u8; 4], header: &[u32]) -> Result<Self> {
        out.write_all(magic)?;
        for h in header {
            out.write_all(&h.to_le_bytes())?;
        }
        Ok(Self { out })
    }

    pub fn u8s(&mut self, v: &[u8]) -> Result<()> {
        self.out.write_all(v)?;
        Ok(())
    }

    pub fn u16s(&mut self, v: impl IntoIterator<Item = u16>) -> Result<()> {
        for x in v {
            self.out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn f32s(&mut self, v: &[f32]) -> Result<()> {
        for x in v {
            self.out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Cursor over an in-memory container with offset-aware errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("expected magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        Ok(Self { bytes, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u8s(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        let raw = self.take(n.checked_mul(2).ok_or_else(|| self.overflow())?)?;
        Ok(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn overflow(&self) -> Error {
        Error::Parse {
            offset: self.pos,
            reason: "declared size overflows".into(),
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
