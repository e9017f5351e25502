//! Little-endian cursor shared by the binary formats.

use crate::error::{Error, Result};
use crate::model::TensorShape;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { offset: self.pos, what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.bytes(N, what)?);
        Ok(a)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], expected: &'static str) -> Result<()> {
        let at = self.pos;
        if self.remaining() < 4 || self.bytes(4, "magic")? != magic {
            return Err(Error::BadMagic { offset: at, expected });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32> {
        self.array(what).map(f32::from_le_bytes)
    }

    /// LEB128 unsigned varint.
    pub fn varint(&mut self, what: &'static str) -> Result<u64> {
        let at = self.pos;
        let mut value = 0u64;
        for i in 0..10 {
            let b = self.u8(what)?;
            let chunk = u64::from(b & 0x7f);
            if i == 9 && chunk > 1 {
                return Err(Error::Malformed { offset: at, reason: "varint overflows u64".into() });
            }
            value |= chunk << (7 * i);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::Malformed { offset: at, reason: "varint longer than 10 bytes".into() })
    }

    /// `name_len u16 | UTF-8 name`.
    pub fn name(&mut self) -> Result<String> {
        let len = self.u16("name length")? as usize;
        let at = self.pos;
        let raw = self.bytes(len, "layer name")?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Malformed { offset: at, reason: "layer name is not UTF-8".into() })
    }

    /// `rank u8 | dims u32 × rank`; also returns the offset of the rank byte.
    pub fn shape(&mut self) -> Result<(TensorShape, usize)> {
        let at = self.pos;
        let rank = self.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("dim")? as usize);
        }
        let shape = TensorShape::new(dims)
            .map_err(|e| Error::Malformed { offset: at, reason: e.to_string() })?;
        Ok((shape, at))
    }
}

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

/// Encoded length of a LEB128 varint in bytes.
pub fn varint_len(v: u64) -> usize {
    let bits = 64 - v.leading_zeros() as usize;
    bits.max(1).div_ceil(7)
}
