//! The 128-bit cipher state shared by every module.
//!
//! Byte `i` of a [`Block`] is the field element `x_i` of the state written
//! `x_15 || x_14 || ... || x_0`, so index 15 is the most significant byte and
//! is printed first in hex form. AES code, which thinks in FIPS-197 byte
//! order, goes through [`Block::to_be_bytes`] / [`Block::from_be_bytes`].

use std::fmt;
use std::ops::{BitXor, BitXorAssign, Index, IndexMut};
use std::str::FromStr;

use thiserror::Error;

pub const BLOCK_LEN: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Block(pub [u8; BLOCK_LEN]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HexError {
    #[error("expected {expected} hex characters, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid hex character {0:?}")]
    Char(char),
}

impl Block {
    pub const ZERO: Block = Block([0; BLOCK_LEN]);

    /// Block whose little-endian integer value is `v` (so `v` lands in `x_0`).
    pub fn from_u128(v: u128) -> Self {
        Block(v.to_le_bytes())
    }

    pub fn to_u128(self) -> u128 {
        u128::from_le_bytes(self.0)
    }

    /// Bytes in written order: `out[0]` is `x_15`.
    pub fn from_be_bytes(bytes: [u8; BLOCK_LEN]) -> Self {
        let mut b = bytes;
        b.reverse();
        Block(b)
    }

    pub fn to_be_bytes(self) -> [u8; BLOCK_LEN] {
        let mut b = self.0;
        b.reverse();
        b
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        let bytes = decode_hex::<BLOCK_LEN>(s)?;
        Ok(Self::from_be_bytes(bytes))
    }

    pub fn to_hex(self) -> String {
        encode_hex(&self.to_be_bytes())
    }

    pub fn hamming_weight(self) -> u32 {
        self.to_u128().count_ones()
    }

    pub fn hamming_distance(self, other: Block) -> u32 {
        (self ^ other).hamming_weight()
    }
}

impl BitXor for Block {
    type Output = Block;

    #[inline]
    fn bitxor(self, rhs: Block) -> Block {
        Block::from_u128(self.to_u128() ^ rhs.to_u128())
    }
}

impl BitXorAssign for Block {
    #[inline]
    fn bitxor_assign(&mut self, rhs: Block) {
        *self = *self ^ rhs;
    }
}

impl Index<usize> for Block {
    type Output = u8;

    fn index(&self, i: usize) -> &u8 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Block {
    fn index_mut(&mut self, i: usize) -> &mut u8 {
        &mut self.0[i]
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block({})", self.to_hex())
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Block {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, HexError> {
        Block::from_hex(s)
    }
}

/// Decodes exactly `N` bytes of hex, most significant first.
pub fn decode_hex<const N: usize>(s: &str) -> Result<[u8; N], HexError> {
    if s.len() != 2 * N {
        return Err(HexError::Length {
            expected: 2 * N,
            got: s.chars().count(),
        });
    }
    let mut out = [0u8; N];
    let digits = s.as_bytes();
    for (i, pair) in digits.chunks_exact(2).enumerate() {
        let hi = nibble(pair[0])?;
        let lo = nibble(pair[1])?;
        out[i] = (hi << 4) | lo;
    }
    Ok(out)
}

fn nibble(c: u8) -> Result<u8, HexError> {
    match c {
        b'0'..=b'9' => Ok(c - b'0'),
        b'a'..=b'f' => Ok(c - b'a' + 10),
        b'A'..=b'F' => Ok(c - b'A' + 10),
        _ => Err(HexError::Char(c as char)),
    }
}

pub fn encode_hex(bytes: &[u8]) -> String {
    use fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
