//! MSB-first bit I/O over entropy-coded data with 0xFF byte stuffing.

/// Accumulates bits and emits stuffed bytes.
#[derive(Debug, Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `len` bits of `code` (len <= 16).
    pub fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 16);
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (code & ((1 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.push_byte(byte);
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    fn push_byte(&mut self, byte: u8) {
        self.out.push(byte);
        if byte == 0xFF {
            self.out.push(0x00);
        }
    }

    /// Pads the final partial byte with 1-bits.
    pub fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
    }

    /// Writes a raw marker; the writer must be byte aligned.
    pub fn marker(&mut self, code: u8) {
        debug_assert_eq!(self.nbits, 0);
        self.out.push(0xFF);
        self.out.push(code);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.out
    }
}

/// Reads bits from a single stuffed entropy segment (no markers inside).
#[derive(Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
    /// Bits consumed so far.
    consumed: u64,
    total_bits: u64,
}

/// Raised when an entropy segment runs out of bits or contains a bare 0xFF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitError {
    Exhausted,
    BadStuffing,
}

impl<'a> BitReader<'a> {
    /// `data` holds the stuffed bytes of one segment.
    pub fn new(data: &'a [u8]) -> Result<Self, BitError> {
        let mut unstuffed = 0u64;
        let mut i = 0;
        while i < data.len() {
            if data[i] == 0xFF {
                if data.get(i + 1) != Some(&0x00) {
                    return Err(BitError::BadStuffing);
                }
                i += 1;
            }
            unstuffed += 1;
            i += 1;
        }
        Ok(Self {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
            consumed: 0,
            total_bits: unstuffed * 8,
        })
    }

    fn refill(&mut self) {
        while self.nbits <= 56 && self.pos < self.data.len() {
            let b = self.data[self.pos];
            self.pos += if b == 0xFF { 2 } else { 1 };
            self.acc |= u64::from(b) << (56 - self.nbits);
            self.nbits += 8;
        }
    }

    /// Peeks up to 16 bits, zero-extended past the end.
    pub fn peek16(&mut self) -> u32 {
        self.refill();
        (self.acc >> 48) as u32
    }

    pub fn available(&self) -> u64 {
        self.total_bits - self.consumed
    }

    pub fn skip(&mut self, n: u32) -> Result<(), BitError> {
        if u64::from(n) > self.available() {
            return Err(BitError::Exhausted);
        }
        self.refill();
        self.acc <<= n;
        self.nbits -= n;
        self.consumed += u64::from(n);
        Ok(())
    }

    pub fn bits(&mut self, n: u32) -> Result<u32, BitError> {
        if n == 0 {
            return Ok(0);
        }
        if u64::from(n) > self.available() {
            return Err(BitError::Exhausted);
        }
        self.refill();
        let v = (self.acc >> (64 - n)) as u32;
        self.acc <<= n;
        self.nbits -= n;
        self.consumed += u64::from(n);
        Ok(v)
    }

    /// The unread bits, which must all be fill when a segment is complete.
    pub fn remaining_bits(&mut self) -> (u32, u32) {
        let n = self.available() as u32;
        if n == 0 || n > 32 {
            return (0, n);
        }
        self.refill();
        ((self.acc >> (64 - n)) as u32, n)
    }
}
