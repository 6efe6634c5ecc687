//! Carry-propagating range coder with 32-bit range and 16-bit totals.
//!
//! The encoder keeps a 33-bit `low`; a byte is held back in `cache` (plus a
//! run of pending 0xFF bytes) until it is known whether a carry will ripple
//! into it. Renormalization shifts out one byte whenever the range falls
//! below 2^24.

use super::table::{FrequencyTable, PRECISION};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, started: false, out: Vec::new() }
    }

    /// Codes the interval `[start, start + freq)` of a `2^16` total.
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= 1 << PRECISION);
        let r = self.range >> PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Sixteen raw bits at uniform cost.
    pub fn encode_bits16(&mut self, v: u16) {
        self.encode(v as u32, 1);
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                // the very first held byte is always zero and never carried into
                if self.started {
                    self.out.push(byte.wrapping_add(carry));
                } else {
                    debug_assert_eq!(byte.wrapping_add(carry), 0);
                    self.started = true;
                }
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

/// Bytes the decoder may read past the end of the stream (implicit zeros).
const SLACK: usize = 4;

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self { data, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied();
        self.pos += 1;
        match b {
            Some(b) => Ok(b),
            None if self.pos <= self.data.len() + SLACK => Ok(0),
            None => Err(Error::Corrupt("range coded segment is truncated".into())),
        }
    }

    /// Position inside the `2^16` total, to be resolved by the caller and
    /// followed by [`RangeDecoder::consume`].
    pub fn target(&mut self) -> Result<u32> {
        let r = self.range >> PRECISION;
        let t = self.code / r;
        if t >> PRECISION != 0 {
            return Err(Error::Corrupt("range decoder state out of bounds".into()));
        }
        Ok(t)
    }

    pub fn consume(&mut self, start: u32, freq: u32) -> Result<()> {
        let r = self.range >> PRECISION;
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode_bits16(&mut self) -> Result<u16> {
        let t = self.target()?;
        self.consume(t, 1)?;
        Ok(t as u16)
    }
}

/// Integer symbols coded against per-symbol tables; values outside a
/// table's window go through its escape entry followed by 32 raw bits.
#[derive(Default)]
pub struct SymbolEncoder {
    enc: RangeEncoder,
}

impl SymbolEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, symbol: i32, table: &FrequencyTable) -> Result<()> {
        match (table.index_of(symbol), table.escape_index()) {
            (Some(i), _) => {
                let (s, f) = table.span(i);
                self.enc.encode(s, f);
            }
            (None, Some(e)) => {
                let (s, f) = table.span(e);
                self.enc.encode(s, f);
                let raw = symbol as u32;
                self.enc.encode_bits16((raw >> 16) as u16);
                self.enc.encode_bits16(raw as u16);
            }
            (None, None) => {
                return Err(Error::InvalidArgument(format!(
                    "symbol {symbol} outside [{}, {}] and the table has no escape",
                    table.min(),
                    table.max()
                )))
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.enc.finish()
    }
}

pub struct SymbolDecoder<'a> {
    dec: RangeDecoder<'a>,
}

impl<'a> SymbolDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        Ok(Self { dec: RangeDecoder::new(data)? })
    }

    pub fn get(&mut self, table: &FrequencyTable) -> Result<i32> {
        let t = self.dec.target()?;
        let i = table.lookup(t).ok_or_else(|| Error::Corrupt("code value beyond table total".into()))?;
        let (s, f) = table.span(i);
        self.dec.consume(s, f)?;
        if Some(i) == table.escape_index() {
            let hi = self.dec.decode_bits16()? as u32;
            let lo = self.dec.decode_bits16()? as u32;
            return Ok(((hi << 16) | lo) as i32);
        }
        Ok(table.symbol(i))
    }
}

/// Codes a whole symbol sequence, one table per symbol.
pub fn encode_symbols<'t>(
    symbols: &[i32],
    tables: impl IntoIterator<Item = &'t FrequencyTable>,
) -> Result<Vec<u8>> {
    let mut enc = SymbolEncoder::new();
    let mut tables = tables.into_iter();
    for &s in symbols {
        let t = tables.next().ok_or_else(|| Error::InvalidArgument("fewer tables than symbols".into()))?;
        enc.put(s, t)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols<'t>(
    data: &[u8],
    tables: impl IntoIterator<Item = &'t FrequencyTable>,
) -> Result<Vec<i32>> {
    let mut dec = SymbolDecoder::new(data)?;
    tables.into_iter().map(|t| dec.get(t)).collect()
}
