//! MSB-first bit packing.

use crate::error::{Error, Result};

/// Packed bits, most significant bit first within each byte. Tail bits of the
/// last byte are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bytes: Vec<u8>,
    bit_length: u64,
}

impl BitStream {
    /// Wraps packed bytes; fails unless `bytes.len() == ceil(bit_length / 8)`
    /// and the padding bits are zero.
    pub fn from_parts(bytes: Vec<u8>, bit_length: u64) -> Result<Self> {
        if bytes.len() as u64 != bit_length.div_ceil(8) {
            return Err(Error::InvalidArgument(format!(
                "{} bytes cannot hold exactly {bit_length} bits",
                bytes.len()
            )));
        }
        let pad = (bytes.len() as u64 * 8 - bit_length) as u32;
        if pad > 0 && bytes.last().is_some_and(|&b| b & ((1u8 << pad) - 1) != 0) {
            return Err(Error::InvalidArgument("non-zero padding bits".into()));
        }
        Ok(Self { bytes, bit_length })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_length(&self) -> u64 {
        self.bit_length
    }

    pub fn bit(&self, i: u64) -> bool {
        self.bytes[(i / 8) as usize] >> (7 - (i % 8)) & 1 == 1
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { stream: self, pos: 0 }
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_length: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `len` bits of `code`, most significant first.
    pub fn write(&mut self, code: u64, len: u8) {
        for shift in (0..len).rev() {
            let bit = (code >> shift) & 1;
            let slot = (self.bit_length % 8) as u32;
            if slot == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 0x80 >> slot;
            }
            self.bit_length += 1;
        }
    }

    pub fn finish(self) -> BitStream {
        BitStream { bytes: self.bytes, bit_length: self.bit_length }
    }
}

pub struct BitReader<'a> {
    stream: &'a BitStream,
    pos: u64,
}

impl BitReader<'_> {
    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.stream.bit_length {
            return Err(Error::StreamExhausted { bit_offset: self.pos });
        }
        let b = self.stream.bit(self.pos);
        self.pos += 1;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut w = BitWriter::new();
        w.write(0b0, 1);
        w.write(0b10, 2);
        w.write(0b0, 1);
        w.write(0b11111, 5);
        let s = w.finish();
        assert_eq!(s.bit_length(), 9);
        assert_eq!(s.bytes(), &[0b0100_1111, 0b1000_0000]);
        let mut r = s.reader();
        let bits: Vec<bool> = (0..9).map(|_| r.read_bit().unwrap()).collect();
        assert_eq!(bits, vec![false, true, false, false, true, true, true, true, true]);
        assert!(matches!(r.read_bit(), Err(Error::StreamExhausted { bit_offset: 9 })));
    }

    #[test]
    fn from_parts_checks_length_and_padding() {
        assert!(BitStream::from_parts(vec![0xff], 8).is_ok());
        assert!(BitStream::from_parts(vec![0xf0], 4).is_ok());
        assert!(BitStream::from_parts(vec![0xf1], 4).is_err());
        assert!(BitStream::from_parts(vec![0, 0], 8).is_err());
        assert_eq!(BitStream::from_parts(vec![], 0).unwrap().bit_length(), 0);
    }
}
