//! One-bit sign packing.
//!
//! Bit `j` of byte `k` carries coordinate `8k + j` (least-significant bit
//! first); `+1` is stored as 1 and `-1` as 0. Pad bits in the last byte are 0.

use crate::error::{Error, Result};

pub fn packed_len(dim: usize) -> usize {
    dim.div_ceil(8)
}

/// Packs a `±1` vector. Any entry `> 0` is stored as a 1 bit.
pub fn pack_bits(signs: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(signs.len())];
    for (j, s) in signs.iter().enumerate() {
        if *s > 0.0 {
            out[j / 8] |= 1 << (j % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], dim: usize) -> Result<Vec<f64>> {
    if dim > 8 * bytes.len() {
        return Err(Error::Codec(format!(
            "{dim} coordinates do not fit in {} bytes",
            bytes.len()
        )));
    }
    Ok((0..dim)
        .map(|j| if bytes[j / 8] >> (j % 8) & 1 == 1 { 1.0 } else { -1.0 })
        .collect())
}

/// LSB-first writer for fixed-width unsigned fields.
#[derive(Debug, Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl BitWriter {
    pub(crate) fn push(&mut self, value: u32, width: u32) {
        for b in 0..width {
            if self.len_bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if value >> b & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 1 << (self.len_bits % 8);
            }
            self.len_bits += 1;
        }
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn read(&mut self, width: u32) -> Result<u32> {
        let mut v = 0u32;
        for b in 0..width {
            let byte = self
                .bytes
                .get(self.pos / 8)
                .ok_or_else(|| Error::Codec("bit stream truncated".into()))?;
            if byte >> (self.pos % 8) & 1 == 1 {
                v |= 1 << b;
            }
            self.pos += 1;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_examples() {
        assert_eq!(pack_bits(&[1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]), vec![0x0D]);
        assert_eq!(pack_bits(&[1.0]), vec![0x01]);
        assert_eq!(pack_bits(&[-1.0]), vec![0x00]);
        assert_eq!(pack_bits(&[]), Vec::<u8>::new());
        // Ninth coordinate opens a second byte; pad bits stay zero.
        assert_eq!(
            pack_bits(&[-1.0; 8].iter().copied().chain([1.0]).collect::<Vec<_>>()),
            vec![0x00, 0x01]
        );
    }

    #[test]
    fn unpack_rejects_short_buffers() {
        assert!(unpack_bits(&[0xFF], 9).is_err());
        assert_eq!(unpack_bits(&[0x0D], 4).unwrap(), vec![1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn bit_fields_round_trip() {
        let mut w = BitWriter::default();
        let values = [0u32, 1, 2, 3, 4, 5, 6, 7, 5, 0, 7];
        for v in values {
            w.push(v, 3);
        }
        let bytes = w.finish();
        assert_eq!(bytes.len(), (values.len() * 3).div_ceil(8));
        let mut r = BitReader::new(&bytes);
        for v in values {
            assert_eq!(r.read(3).unwrap(), v);
        }
    }

    proptest! {
        #[test]
        fn pack_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..=257)) {
            let signs: Vec<f64> = bits.iter().map(|b| if *b { 1.0 } else { -1.0 }).collect();
            let packed = pack_bits(&signs);
            prop_assert_eq!(packed.len(), signs.len().div_ceil(8));
            let pad = packed.len() * 8 - signs.len();
            if pad > 0 {
                prop_assert_eq!(packed[packed.len() - 1] >> (8 - pad), 0);
            }
            prop_assert_eq!(unpack_bits(&packed, signs.len()).unwrap(), signs);
        }
    }
}
