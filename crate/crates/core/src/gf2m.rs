//! Bit vectors over GF(2)^m.
//!
//! Universe elements `0..2^m` are identified with vectors by their standard
//! binary encoding; element `0` is the additive identity. The width `m` is
//! carried with every vector.

use std::fmt;

use crate::error::{Error, Result};

/// Largest supported width.
pub const MAX_BITS: u32 = 64;

/// A vector in GF(2)^m, stored in the low `m` bits of a `u64`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gf2Vec {
    bits: u64,
    m: u32,
}

fn mask(m: u32) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

fn check_width(m: u32) -> Result<()> {
    if !(2..=MAX_BITS).contains(&m) {
        return Err(Error::usage(format!("vector width m={m} outside 2..={MAX_BITS}")));
    }
    Ok(())
}

impl Gf2Vec {
    /// The all-zeros vector of width `m`.
    pub fn zero(m: u32) -> Result<Self> {
        check_width(m)?;
        Ok(Gf2Vec { bits: 0, m })
    }

    /// Binary encoding of the universe element `index`.
    pub fn from_index(index: u64, m: u32) -> Result<Self> {
        check_width(m)?;
        if index & !mask(m) != 0 {
            return Err(Error::usage(format!("index {index} out of range for m={m}")));
        }
        Ok(Gf2Vec { bits: index, m })
    }

    /// Parse a big-endian bit string such as `"000101"`.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let m = s.len() as u32;
        check_width(m)?;
        let mut bits = 0u64;
        for ch in s.chars() {
            bits = (bits << 1)
                | match ch {
                    '0' => 0,
                    '1' => 1,
                    _ => return Err(Error::parse("bit string", format!("unexpected character {ch:?}"))),
                };
        }
        Ok(Gf2Vec { bits, m })
    }

    pub(crate) fn from_raw(bits: u64, m: u32) -> Self {
        debug_assert!(bits & !mask(m) == 0);
        Gf2Vec { bits, m }
    }

    /// The universe element this vector encodes.
    pub fn index(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> u32 {
        self.m
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    fn same_width(&self, other: &Self) -> Result<()> {
        if self.m != other.m {
            return Err(Error::usage(format!(
                "vector width mismatch: {} vs {}",
                self.m, other.m
            )));
        }
        Ok(())
    }

    /// Field addition (bitwise XOR).
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_width(other)?;
        Ok(Gf2Vec {
            bits: self.bits ^ other.bits,
            m: self.m,
        })
    }

    /// The GF(2) inner product: parity of the bitwise AND.
    pub fn inner(&self, other: &Self) -> Result<u8> {
        self.same_width(other)?;
        Ok(parity(self.bits & other.bits))
    }
}

impl fmt::Debug for Gf2Vec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf2Vec({self})")
    }
}

impl fmt::Display for Gf2Vec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in (0..self.m).rev() {
            f.write_str(if self.bits >> k & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parity of the set bits of `x`.
#[inline]
pub fn parity(x: u64) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Inner product of two raw encodings of equal width.
#[inline]
pub fn inner_raw(a: u64, b: u64) -> u8 {
    parity(a & b)
}

/// Width `m = log2(4 n^2) = 2 log2 n + 2` of the universe `[0, 4n^2)`.
pub fn universe_bits(n: usize) -> Result<u32> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::usage(format!("n={n} must be a power of two, n >= 2")));
    }
    let m = 2 * n.trailing_zeros() + 2;
    check_width(m)?;
    Ok(m)
}
