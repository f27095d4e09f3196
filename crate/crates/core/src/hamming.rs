//! Hamming SEC / SECDED helper data.
//!
//! Codeword layout: positions are 1-based, parity bits sit at the power-of-two
//! positions, data bits fill the remaining positions in ascending order. With
//! this layout the syndrome of a single error equals its position. SECDED
//! appends one overall parity bit after the last position.
//!
//! Only parity is persisted: one byte per codeword, LSB-first (`p1` at bit 0,
//! `p2` at bit 1, `p4` at bit 2, ..., overall parity at bit `parity_bits - 1`).
//! At decode time the codeword is rebuilt from the current raw read and the
//! stored parity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::Response;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HammingVariant {
    data_bits: u8,
    extended: bool,
}

impl HammingVariant {
    pub const H7_4: HammingVariant = HammingVariant { data_bits: 4, extended: false };
    pub const H8_4: HammingVariant = HammingVariant { data_bits: 4, extended: true };
    pub const H12_8: HammingVariant = HammingVariant { data_bits: 8, extended: false };
    pub const H13_8: HammingVariant = HammingVariant { data_bits: 8, extended: true };
    pub const H21_16: HammingVariant = HammingVariant { data_bits: 16, extended: false };
    pub const H22_16: HammingVariant = HammingVariant { data_bits: 16, extended: true };

    pub const ALL: [HammingVariant; 6] = [
        Self::H7_4,
        Self::H8_4,
        Self::H12_8,
        Self::H13_8,
        Self::H21_16,
        Self::H22_16,
    ];

    pub fn new(data_bits: u8, extended: bool) -> Result<Self> {
        match data_bits {
            4 | 8 | 16 => Ok(HammingVariant { data_bits, extended }),
            other => Err(Error::invalid(format!("unsupported data width {other}"))),
        }
    }

    pub fn data_bits(self) -> usize {
        self.data_bits as usize
    }

    pub fn extended(self) -> bool {
        self.extended
    }

    /// Parity bits of the underlying SEC code (3, 4 or 5).
    fn sec_parity_bits(self) -> usize {
        match self.data_bits {
            4 => 3,
            8 => 4,
            _ => 5,
        }
    }

    /// Codeword positions excluding the SECDED overall bit.
    fn sec_len(self) -> usize {
        self.data_bits() + self.sec_parity_bits()
    }

    pub fn parity_bits(self) -> usize {
        self.sec_parity_bits() + usize::from(self.extended)
    }

    pub fn codeword_bits(self) -> usize {
        self.data_bits() + self.parity_bits()
    }

    pub fn code_rate(self) -> f64 {
        self.data_bits() as f64 / self.codeword_bits() as f64
    }

    /// File/wire tag: low two bits select the data width (0=4, 1=8, 2=16),
    /// bit 2 is the extended flag.
    pub fn tag(self) -> u8 {
        let width = match self.data_bits {
            4 => 0,
            8 => 1,
            _ => 2,
        };
        width | (u8::from(self.extended) << 2)
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        if tag & !0b111 != 0 {
            return Err(Error::format(format!("invalid variant tag {tag:#04x}")));
        }
        let data_bits = match tag & 0b11 {
            0 => 4,
            1 => 8,
            2 => 16,
            _ => return Err(Error::format(format!("invalid variant tag {tag:#04x}"))),
        };
        Ok(HammingVariant {
            data_bits,
            extended: tag & 0b100 != 0,
        })
    }

    /// Codeword position (1-based) of each data bit.
    fn data_positions(self) -> impl Iterator<Item = usize> {
        (1..=self.sec_len()).filter(|p| !p.is_power_of_two())
    }
}

impl fmt::Display for HammingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H({},{})", self.codeword_bits(), self.data_bits)
    }
}

impl FromStr for HammingVariant {
    type Err = Error;

    /// Accepts `H(7,4)`, `h7_4`, `7,4` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<usize> = s
            .split(|c: char| !c.is_ascii_digit())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().unwrap())
            .collect();
        let [k, d] = digits[..] else {
            return Err(Error::format(format!("cannot parse Hamming variant {s:?}")));
        };
        HammingVariant::ALL
            .into_iter()
            .find(|v| v.codeword_bits() == k && v.data_bits() == d)
            .ok_or_else(|| Error::format(format!("unsupported Hamming variant {s:?}")))
    }
}

impl TryFrom<String> for HammingVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HammingVariant> for String {
    fn from(v: HammingVariant) -> String {
        v.to_string()
    }
}

/// A codeword as a bit set: bit `p` is codeword position `p` (1-based; bit 0
/// unused). For SECDED the overall parity bit sits at position `sec_len + 1`.
pub type Codeword = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockOutcome {
    Clean,
    SingleCorrected,
    DoubleDetected,
    /// Syndrome addresses no codeword position, or SECDED saw an odd error
    /// count it cannot place; the block is left as read.
    MiscorrectionPossible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDecode {
    pub codeword: Codeword,
    pub data: u16,
    pub outcome: BlockOutcome,
    pub flipped: bool,
}

fn syndrome_of(cw: Codeword, sec_len: usize) -> usize {
    (1..=sec_len).filter(|&p| cw >> p & 1 == 1).fold(0, |s, p| s ^ p)
}

pub fn encode_codeword(variant: HammingVariant, data: u16) -> Codeword {
    let mut cw: Codeword = 0;
    for (j, pos) in variant.data_positions().enumerate() {
        if data >> j & 1 == 1 {
            cw |= 1 << pos;
        }
    }
    // setting parity bit 2^i to bit i of the data syndrome zeroes the syndrome
    let s = syndrome_of(cw, variant.sec_len());
    for i in 0..variant.sec_parity_bits() {
        if s >> i & 1 == 1 {
            cw |= 1 << (1 << i);
        }
    }
    if variant.extended && cw.count_ones() % 2 == 1 {
        cw |= 1 << (variant.sec_len() + 1);
    }
    cw
}

pub fn extract_data(variant: HammingVariant, cw: Codeword) -> u16 {
    variant
        .data_positions()
        .enumerate()
        .fold(0u16, |d, (j, pos)| d | (((cw >> pos & 1) as u16) << j))
}

/// Packs the parity positions of `cw` into the helper byte layout.
pub fn parity_byte(variant: HammingVariant, cw: Codeword) -> u8 {
    let mut b = 0u8;
    for i in 0..variant.sec_parity_bits() {
        b |= ((cw >> (1 << i) & 1) as u8) << i;
    }
    if variant.extended {
        b |= ((cw >> (variant.sec_len() + 1) & 1) as u8) << variant.sec_parity_bits();
    }
    b
}

/// Rebuilds a codeword from data bits and a helper byte.
pub fn assemble_codeword(variant: HammingVariant, data: u16, parity: u8) -> Codeword {
    let mut cw: Codeword = 0;
    for (j, pos) in variant.data_positions().enumerate() {
        if data >> j & 1 == 1 {
            cw |= 1 << pos;
        }
    }
    for i in 0..variant.sec_parity_bits() {
        if parity >> i & 1 == 1 {
            cw |= 1 << (1 << i);
        }
    }
    if variant.extended && parity >> variant.sec_parity_bits() & 1 == 1 {
        cw |= 1 << (variant.sec_len() + 1);
    }
    cw
}

pub fn decode_codeword(variant: HammingVariant, cw: Codeword) -> BlockDecode {
    let sec_len = variant.sec_len();
    let s = syndrome_of(cw, sec_len);
    let (fixed, outcome, flipped) = if variant.extended {
        let overall_odd = cw.count_ones() % 2 == 1;
        match (s, overall_odd) {
            (0, false) => (cw, BlockOutcome::Clean, false),
            // error in the overall parity bit itself
            (0, true) => (cw ^ (1 << (sec_len + 1)), BlockOutcome::SingleCorrected, true),
            (s, true) if s <= sec_len => (cw ^ (1 << s), BlockOutcome::SingleCorrected, true),
            (_, true) => (cw, BlockOutcome::MiscorrectionPossible, false),
            (_, false) => (cw, BlockOutcome::DoubleDetected, false),
        }
    } else {
        match s {
            0 => (cw, BlockOutcome::Clean, false),
            s if s <= sec_len => (cw ^ (1 << s), BlockOutcome::SingleCorrected, true),
            _ => (cw, BlockOutcome::MiscorrectionPossible, false),
        }
    };
    BlockDecode {
        codeword: fixed,
        data: extract_data(variant, fixed),
        outcome,
        flipped,
    }
}

/// Parity-only helper data for one enrolled response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperData {
    variant: HammingVariant,
    parity_blocks: Vec<u8>,
}

pub const HELPER_MAGIC: &[u8; 4] = b"PUFH";
pub const HELPER_VERSION: u8 = 1;

impl HelperData {
    pub fn new(variant: HammingVariant, parity_blocks: Vec<u8>) -> Result<Self> {
        let limit = 1u16 << variant.parity_bits();
        if let Some(b) = parity_blocks.iter().find(|&&b| u16::from(b) >= limit) {
            return Err(Error::format(format!(
                "helper byte {b:#04x} exceeds {} parity bits of {variant}",
                variant.parity_bits()
            )));
        }
        Ok(HelperData { variant, parity_blocks })
    }

    pub fn variant(&self) -> HammingVariant {
        self.variant
    }

    pub fn parity_blocks(&self) -> &[u8] {
        &self.parity_blocks
    }

    pub fn codeword_count(&self) -> usize {
        self.parity_blocks.len()
    }

    /// Number of response bits this helper covers.
    pub fn data_len(&self) -> usize {
        self.codeword_count() * self.variant.data_bits()
    }

    /// `"PUFH"`, version, variant tag, `u32` big-endian codeword count, parity bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.parity_blocks.len());
        out.extend_from_slice(HELPER_MAGIC);
        out.push(HELPER_VERSION);
        out.push(self.variant.tag());
        out.extend_from_slice(&(self.parity_blocks.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.parity_blocks);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::format("helper file shorter than header"));
        }
        if &bytes[..4] != HELPER_MAGIC {
            return Err(Error::format("bad helper magic"));
        }
        if bytes[4] != HELPER_VERSION {
            return Err(Error::format(format!("unsupported helper version {}", bytes[4])));
        }
        let variant = HammingVariant::from_tag(bytes[5])?;
        let count = u32::from_be_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = &bytes[10..];
        if body.len() != count {
            return Err(Error::format(format!(
                "helper declares {count} codewords but carries {} bytes",
                body.len()
            )));
        }
        HelperData::new(variant, body.to_vec())
    }
}

fn block_data(r: &Response, block: usize, width: usize) -> u16 {
    (0..width).fold(0u16, |d, j| d | (u16::from(r.get(block * width + j)) << j))
}

pub fn enroll_helper(data: &Response, variant: HammingVariant) -> Result<HelperData> {
    let width = variant.data_bits();
    if data.len() % width != 0 {
        return Err(Error::NotDivisible {
            len: data.len(),
            block: width,
        });
    }
    let parity_blocks = (0..data.len() / width)
        .map(|b| parity_byte(variant, encode_codeword(variant, block_data(data, b, width))))
        .collect();
    Ok(HelperData { variant, parity_blocks })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub clean: usize,
    pub single_corrected: usize,
    pub double_detected: usize,
    pub miscorrection_possible: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.clean + self.single_corrected + self.double_detected + self.miscorrection_possible
    }

    fn record(&mut self, o: BlockOutcome) {
        match o {
            BlockOutcome::Clean => self.clean += 1,
            BlockOutcome::SingleCorrected => self.single_corrected += 1,
            BlockOutcome::DoubleDetected => self.double_detected += 1,
            BlockOutcome::MiscorrectionPossible => self.miscorrection_possible += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    pub corrected: Response,
    pub outcomes: OutcomeCounts,
    /// Flips applied to reconstructed codewords, parity positions included.
    pub bit_flips_applied: usize,
}

pub fn decode(raw: &Response, helper: &HelperData) -> Result<DecodeReport> {
    let variant = helper.variant;
    let width = variant.data_bits();
    if raw.len() != helper.data_len() {
        return Err(Error::LengthMismatch {
            expected: helper.data_len(),
            actual: raw.len(),
        });
    }
    let mut corrected = raw.clone();
    let mut outcomes = OutcomeCounts::default();
    let mut flips = 0;
    for (b, &parity) in helper.parity_blocks.iter().enumerate() {
        let data = block_data(raw, b, width);
        let res = decode_codeword(variant, assemble_codeword(variant, data, parity));
        outcomes.record(res.outcome);
        flips += usize::from(res.flipped);
        let diff = res.data ^ data;
        if diff != 0 {
            for j in 0..width {
                if diff >> j & 1 == 1 {
                    corrected.flip(b * width + j);
                }
            }
        }
    }
    Ok(DecodeReport {
        corrected,
        outcomes,
        bit_flips_applied: flips,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityFootprint {
    pub blocks: usize,
    pub parity_bits: usize,
    pub nvs_bytes: usize,
    pub code_rate: f64,
}

/// Helper-data storage cost for a response of `response_bytes` bytes.
pub fn parity_footprint(variant: HammingVariant, response_bytes: usize) -> Result<ParityFootprint> {
    let bits = response_bytes * 8;
    if bits % variant.data_bits() != 0 {
        return Err(Error::NotDivisible {
            len: bits,
            block: variant.data_bits(),
        });
    }
    let blocks = bits / variant.data_bits();
    Ok(ParityFootprint {
        blocks,
        parity_bits: blocks * variant.parity_bits(),
        nvs_bytes: blocks,
        code_rate: variant.code_rate(),
    })
}
