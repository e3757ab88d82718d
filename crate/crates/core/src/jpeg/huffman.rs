//! Canonical Huffman code construction, encoding and decoding.

use super::bits::{BitError, BitReader, BitWriter};
use super::tables::HuffmanSpec;

/// Code word and length per symbol.
#[derive(Debug, Clone)]
pub struct HuffmanEncoder {
    codes: [(u16, u8); 256],
}

impl HuffmanEncoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u32;
        let mut k = 0;
        for (len_minus_1, &count) in spec.counts.iter().enumerate() {
            for _ in 0..count {
                codes[spec.symbols[k] as usize] = (code as u16, len_minus_1 as u8 + 1);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Self { codes }
    }

    pub fn emit(&self, w: &mut BitWriter, symbol: u8) {
        let (code, len) = self.codes[symbol as usize];
        debug_assert!(len > 0, "symbol {symbol:#x} has no code");
        w.put(u32::from(code), u32::from(len));
    }
}

/// Length-indexed canonical decoder.
#[derive(Debug, Clone)]
pub struct HuffmanDecoder {
    /// Largest code of each length (index 1..=16), -1 if none.
    max_code: [i32; 17],
    /// Offset into `symbols` of the first code of each length, minus that code.
    val_offset: [i32; 17],
    symbols: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HuffmanError {
    Bits(BitError),
    InvalidCode,
}

impl From<BitError> for HuffmanError {
    fn from(e: BitError) -> Self {
        HuffmanError::Bits(e)
    }
}

impl HuffmanDecoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut max_code = [-1i32; 17];
        let mut val_offset = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let count = i32::from(spec.counts[len - 1]);
            if count > 0 {
                val_offset[len] = k - code;
                code += count;
                k += count;
                max_code[len] = code - 1;
            }
            code <<= 1;
        }
        Self {
            max_code,
            val_offset,
            symbols: spec.symbols.clone(),
        }
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u8, HuffmanError> {
        let peek = r.peek16() as i32;
        for len in 1..=16usize {
            let code = peek >> (16 - len);
            if code <= self.max_code[len] {
                r.skip(len as u32)?;
                let idx = (self.val_offset[len] + code) as usize;
                return self.symbols.get(idx).copied().ok_or(HuffmanError::InvalidCode);
            }
        }
        Err(HuffmanError::InvalidCode)
    }
}

/// Number of magnitude bits needed for `v`.
pub fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

/// Magnitude bits of `v` in its category, ones-complement for negatives.
pub fn magnitude_bits(v: i32, cat: u32) -> u32 {
    if v < 0 {
        (v - 1) as u32 & ((1 << cat) - 1)
    } else {
        v as u32
    }
}

/// Inverse of [`magnitude_bits`].
pub fn extend(bits: u32, cat: u32) -> i32 {
    if cat == 0 {
        return 0;
    }
    if bits < (1 << (cat - 1)) {
        bits as i32 - (1 << cat) + 1
    } else {
        bits as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_dc_codes() {
        let enc = HuffmanEncoder::new(&HuffmanSpec::luma_dc());
        assert_eq!(enc.codes[0], (0b00, 2));
        assert_eq!(enc.codes[6], (0b1110, 4));
        assert_eq!(enc.codes[11], (0b1_1111_1110, 9));
        let ac = HuffmanEncoder::new(&HuffmanSpec::luma_ac());
        assert_eq!(ac.codes[0x00], (0b1010, 4));
        assert_eq!(ac.codes[0xF0], (0b111_1111_1001, 11));
    }

    #[test]
    fn encode_decode_every_symbol() {
        for spec in [
            HuffmanSpec::luma_dc(),
            HuffmanSpec::chroma_dc(),
            HuffmanSpec::luma_ac(),
            HuffmanSpec::chroma_ac(),
        ] {
            let enc = HuffmanEncoder::new(&spec);
            let dec = HuffmanDecoder::new(&spec);
            let mut w = BitWriter::new();
            for &s in &spec.symbols {
                enc.emit(&mut w, s);
            }
            w.flush();
            let bytes = w.into_bytes();
            let mut r = BitReader::new(&bytes).unwrap();
            for &s in &spec.symbols {
                assert_eq!(dec.decode(&mut r).unwrap(), s);
            }
        }
    }

    #[test]
    fn all_ones_is_invalid() {
        let dec = HuffmanDecoder::new(&HuffmanSpec::luma_dc());
        let data = [0xFF, 0x00, 0xFF, 0x00];
        let mut r = BitReader::new(&data).unwrap();
        assert_eq!(dec.decode(&mut r), Err(HuffmanError::InvalidCode));
    }

    #[test]
    fn magnitude_roundtrip() {
        for v in -2047..=2047 {
            let c = category(v);
            assert_eq!(extend(magnitude_bits(v, c), c), v);
        }
        assert_eq!(category(-32), 6);
        assert_eq!(magnitude_bits(-32, 6), 31);
    }
}
