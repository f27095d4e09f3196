//! Fixed-length bit vectors.
//!
//! Bit `i` lives in word `i / 64` at bit position `i % 64`. The packed byte
//! form used by every file and wire format is LSB-first: byte `j` bit `k`
//! holds response bit `8 * j + k`.

use std::fmt;
use std::ops::BitXor;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Response {
    len: usize,
    words: Vec<u64>,
}

impl Response {
    pub fn zeros(len: usize) -> Self {
        Response {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut r = Self::zeros(len);
        for w in &mut r.words {
            *w = u64::MAX;
        }
        r.clear_tail();
        r
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0usize;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Response { len, words }
    }

    /// Unpacks `len` bits from LSB-first packed bytes.
    pub fn from_packed(bytes: &[u8], len: usize) -> Result<Self> {
        let need = len.div_ceil(8);
        if bytes.len() != need {
            return Err(Error::format(format!(
                "{len} bits need {need} packed bytes, got {}",
                bytes.len()
            )));
        }
        let mut r = Self::zeros(len);
        for (j, &byte) in bytes.iter().enumerate() {
            r.words[j / 8] |= u64::from(byte) << (8 * (j % 8));
        }
        if len % 8 != 0 && bytes[need - 1] >> (len % 8) != 0 {
            return Err(Error::format("nonzero padding bits in packed response"));
        }
        Ok(r)
    }

    pub fn to_packed(&self) -> Vec<u8> {
        (0..self.len.div_ceil(8))
            .map(|j| (self.words[j / 8] >> (8 * (j % 8))) as u8)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &Response) -> Result<Response> {
        self.check_len(other)?;
        Ok(Response {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        })
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &Response) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn not(&self) -> Response {
        let mut r = Response {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        r.clear_tail();
        r
    }

    /// Copies bits `[start, start + len)` into a new response.
    pub fn slice(&self, start: usize, len: usize) -> Result<Response> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.len)
            .ok_or_else(|| Error::invalid(format!("window {start}+{len} exceeds {}", self.len)))?;
        Ok(Response::from_bits((start..end).map(|i| self.get(i))))
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a Response>>(parts: I) -> Response {
        Response::from_bits(parts.into_iter().flat_map(|p| p.iter()))
    }

    fn check_len(&self, other: &Response) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        Ok(())
    }

    fn clear_tail(&mut self) {
        if self.len % 64 != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
    }
}

impl BitXor for &Response {
    type Output = Response;

    /// Panics on length mismatch; use [`Response::xor`] for the fallible form.
    fn bitxor(self, rhs: &Response) -> Response {
        self.xor(rhs).expect("xor of responses with different lengths")
    }
}

/// Parses a string of `0`/`1` characters; character `i` becomes bit `i`.
impl FromStr for Response {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::format(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Response::from_bits)
    }
}

/// Serialized as a `0`/`1` string so stored records stay diffable.
impl Serialize for Response {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Response {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "Response({self})")
        } else {
            write!(f, "Response(len={}, hw={})", self.len, self.count_ones())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> Response {
        s.parse().unwrap()
    }

    #[test]
    fn string_round_trip_and_bit_order() {
        let x = r("10110100");
        assert!(x.get(0));
        assert!(!x.get(1));
        assert_eq!(x.to_string(), "10110100");
        // LSB-first packing: bits 0,2,3,5 set
        assert_eq!(x.to_packed(), vec![0b0010_1101]);
    }

    #[test]
    fn not_clears_tail() {
        let x = r("101");
        assert_eq!(x.not().to_string(), "010");
        assert_eq!(x.not().count_ones(), 1);
        assert_eq!(Response::ones(70).count_ones(), 70);
    }

    #[test]
    fn packed_rejects_bad_lengths_and_padding() {
        assert!(Response::from_packed(&[0xFF], 9).is_err());
        assert!(Response::from_packed(&[0xFF], 4).is_err());
        assert_eq!(Response::from_packed(&[0x0F], 4).unwrap(), r("1111"));
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(matches!(
            r("101").hamming_distance(&r("1010")),
            Err(Error::LengthMismatch { expected: 3, actual: 4 })
        ));
    }

    proptest! {
        #[test]
        fn packed_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let x = Response::from_bits(bits.iter().copied());
            let back = Response::from_packed(&x.to_packed(), x.len()).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn slice_concat_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..300), cut in 0usize..300) {
            let x = Response::from_bits(bits.iter().copied());
            let cut = cut % (x.len() + 1);
            let a = x.slice(0, cut).unwrap();
            let b = x.slice(cut, x.len() - cut).unwrap();
            prop_assert_eq!(Response::concat([&a, &b]), x);
        }
    }
}
