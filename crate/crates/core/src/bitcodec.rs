//! Radix and substitution block-coding conversions between non-negative
//! integers and bit strings.
//!
//! Everything here is pure and reentrant. A [`BitString`] keeps its leading
//! zeros: two strings of different length are never equal, even when they
//! denote the same number.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use num::{BigUint, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unsupported radix {0}: expected 2, 8, or 16")]
    UnsupportedRadix(u32),
    #[error("empty bit string has no numeric value")]
    EmptyBits,
    #[error("invalid bit character {0:?}")]
    InvalidBitChar(char),
    #[error("coded length {0} is not a multiple of 5")]
    Framing(usize),
    #[error("group {index} is not a valid 5-bit symbol: {symbol}")]
    InvalidSymbol { index: usize, symbol: String },
    #[error("symbol {0:#07b} must be a 5-bit value")]
    SymbolOutOfRange(u8),
    #[error("substitution table is not injective: symbol {0:#07b} appears twice")]
    DuplicateSymbol(u8),
}

/// Ordered bit sequence, most-significant bit first.
///
/// Length is significant: `"0001"` and `"1"` denote the same number but are
/// not equal as bit strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString(Vec<u8>);

impl BitString {
    pub fn new() -> Self {
        BitString(Vec::new())
    }

    /// Builds from anything yielding 0/1 values. Non-binary values are
    /// clamped to 1, so callers should pass genuine bits.
    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        BitString(bits.into_iter().map(|b| u8::from(b != 0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(u8::from(bit));
    }

    /// Bit at position `i`, counting from the most-significant end.
    pub fn bit(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut bits = self.0.clone();
        bits.extend_from_slice(&other.0);
        BitString(bits)
    }

    /// Zero-pads on the left to `len` bits. No-op when already at least
    /// that long; preserves the numeric value either way.
    pub fn left_pad(&self, len: usize) -> BitString {
        if self.0.len() >= len {
            return self.clone();
        }
        let mut bits = vec![0u8; len - self.0.len()];
        bits.extend_from_slice(&self.0);
        BitString(bits)
    }

    /// Packs into hex nibbles, most-significant first, after left-padding
    /// to a nibble boundary. The numeric value is preserved.
    pub fn to_hex(&self) -> String {
        let padded = self.left_pad(self.0.len().div_ceil(4) * 4);
        padded
            .0
            .chunks(4)
            .map(|n| {
                let v = n.iter().fold(0u8, |acc, b| (acc << 1) | b);
                char::from_digit(u32::from(v), 16).unwrap()
            })
            .collect()
    }

    /// Inverse of [`BitString::to_hex`] given the original bit length.
    pub fn from_hex(hex: &str, len: usize) -> Result<BitString, CodecError> {
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or(CodecError::InvalidBitChar(c))? as u8;
            for shift in (0..4).rev() {
                bits.push((v >> shift) & 1);
            }
        }
        if bits.len() < len {
            return Err(CodecError::EmptyBits);
        }
        Ok(BitString(bits.split_off(bits.len() - len)))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(0),
                '1' => bits.push(1),
                other => return Err(CodecError::InvalidBitChar(other)),
            }
        }
        Ok(BitString(bits))
    }
}

/// Bitwise fusion gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Or,
    And,
    Xor,
}

impl Gate {
    pub fn apply(self, a: u8, b: u8) -> u8 {
        match self {
            Gate::Or => a | b,
            Gate::And => a & b,
            Gate::Xor => a ^ b,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gate::Or => "or",
            Gate::And => "and",
            Gate::Xor => "xor",
        })
    }
}

impl FromStr for Gate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "or" => Ok(Gate::Or),
            "and" => Ok(Gate::And),
            "xor" => Ok(Gate::Xor),
            other => Err(format!("unknown gate {other:?}: expected or, and, xor")),
        }
    }
}

/// Number base used when expanding integers to bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Radix {
    Binary,
    Octal,
    Hex,
}

impl Radix {
    pub fn value(self) -> u32 {
        match self {
            Radix::Binary => 2,
            Radix::Octal => 8,
            Radix::Hex => 16,
        }
    }
}

impl TryFrom<u32> for Radix {
    type Error = CodecError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        match v {
            2 => Ok(Radix::Binary),
            8 => Ok(Radix::Octal),
            16 => Ok(Radix::Hex),
            other => Err(CodecError::UnsupportedRadix(other)),
        }
    }
}

impl FromStr for Radix {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: u32 = s.parse().map_err(|_| CodecError::UnsupportedRadix(0))?;
        Radix::try_from(v)
    }
}

/// Expands `n` to bits. Binary yields the minimal expansion (a single "0"
/// for zero); octal and hex emit each digit of the expansion as a fixed
/// 3- or 4-bit group, most-significant digit first, so the stream stays
/// unambiguous.
pub fn to_bits(n: &BigUint, radix: Radix) -> BitString {
    if n.is_zero() {
        return match radix {
            Radix::Binary => BitString(vec![0]),
            Radix::Octal => BitString(vec![0, 0, 0]),
            Radix::Hex => BitString(vec![0, 0, 0, 0]),
        };
    }
    let (base, width) = match radix {
        Radix::Binary => (2u32, 1usize),
        Radix::Octal => (8, 3),
        Radix::Hex => (16, 4),
    };
    let digits = n.to_radix_be(base);
    let mut bits = Vec::with_capacity(digits.len() * width);
    for d in digits {
        for shift in (0..width).rev() {
            bits.push((d >> shift) & 1);
        }
    }
    BitString(bits)
}

/// Base-2 value of a bit string. Leading zeros are ignored numerically.
pub fn from_bits(b: &BitString) -> Result<BigUint, CodecError> {
    if b.is_empty() {
        return Err(CodecError::EmptyBits);
    }
    let mut acc = BigUint::zero();
    for bit in b.iter() {
        acc <<= 1;
        acc |= BigUint::from(bit);
    }
    Ok(acc)
}

/// Substitution table mapping each 4-bit nibble to a 5-bit symbol.
///
/// The standard table implements 4B/5B block coding; alternative injective
/// tables can be supplied to swap in other substitution schemes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NibbleTable {
    forward: [u8; 16],
    reverse: [Option<u8>; 32],
}

// 5-bit symbols for nibbles 0x0..=0xF.
const STANDARD_SYMBOLS: [u8; 16] = [
    0b11110, 0b01001, 0b10100, 0b10101, 0b01010, 0b01011, 0b01110, 0b01111,
    0b10010, 0b10011, 0b10110, 0b10111, 0b11010, 0b11011, 0b11100, 0b11101,
];

static STANDARD_TABLE: LazyLock<NibbleTable> =
    LazyLock::new(|| NibbleTable::new(STANDARD_SYMBOLS).expect("standard table is valid"));

impl NibbleTable {
    /// Builds a table from the 16 forward symbols, checking that each is a
    /// 5-bit value and that no symbol repeats.
    pub fn new(forward: [u8; 16]) -> Result<Self, CodecError> {
        let mut reverse = [None; 32];
        for (nibble, &sym) in forward.iter().enumerate() {
            if sym >= 32 {
                return Err(CodecError::SymbolOutOfRange(sym));
            }
            if reverse[sym as usize].is_some() {
                return Err(CodecError::DuplicateSymbol(sym));
            }
            reverse[sym as usize] = Some(nibble as u8);
        }
        Ok(NibbleTable { forward, reverse })
    }

    /// The standard 4B/5B substitution table.
    pub fn standard() -> &'static NibbleTable {
        &STANDARD_TABLE
    }

    /// Left-pads the input with zeros to a nibble boundary, then replaces
    /// each 4-bit group with its 5-bit symbol. Output length is
    /// `5 * ceil(len / 4)`.
    pub fn encode(&self, b: &BitString) -> BitString {
        let padded = b.left_pad(b.len().div_ceil(4) * 4);
        let mut out = Vec::with_capacity(padded.len() / 4 * 5);
        for group in padded.0.chunks(4) {
            let nibble = group.iter().fold(0u8, |acc, bit| (acc << 1) | bit);
            let sym = self.forward[nibble as usize];
            for shift in (0..5).rev() {
                out.push((sym >> shift) & 1);
            }
        }
        BitString(out)
    }

    /// Maps each 5-bit group back through the reverse table.
    pub fn decode(&self, b: &BitString) -> Result<BitString, CodecError> {
        if !b.len().is_multiple_of(5) {
            return Err(CodecError::Framing(b.len()));
        }
        let mut out = Vec::with_capacity(b.len() / 5 * 4);
        for (index, group) in b.0.chunks(5).enumerate() {
            let sym = group.iter().fold(0u8, |acc, bit| (acc << 1) | bit);
            let nibble = self.reverse[sym as usize].ok_or_else(|| CodecError::InvalidSymbol {
                index,
                symbol: group.iter().map(|b| char::from(b'0' + b)).collect(),
            })?;
            for shift in (0..4).rev() {
                out.push((nibble >> shift) & 1);
            }
        }
        Ok(out.into())
    }
}

impl From<Vec<u8>> for BitString {
    fn from(bits: Vec<u8>) -> Self {
        BitString::from_bits(bits)
    }
}

/// 4B/5B encode with the standard table.
pub fn encode_4b5b(b: &BitString) -> BitString {
    NibbleTable::standard().encode(b)
}

/// 4B/5B decode with the standard table.
pub fn decode_4b5b(b: &BitString) -> Result<BitString, CodecError> {
    NibbleTable::standard().decode(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::Num;
    use proptest::prelude::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    // Independent oracle: minimal binary by repeated division.
    fn binary_by_repeated_division(n: &BigUint) -> String {
        if n.is_zero() {
            return "0".into();
        }
        let two = BigUint::from(2u8);
        let mut n = n.clone();
        let mut digits = Vec::new();
        while !n.is_zero() {
            digits.push(if (&n % &two).is_zero() { '0' } else { '1' });
            n /= &two;
        }
        digits.iter().rev().collect()
    }

    #[test]
    fn to_bits_binary_examples() {
        assert_eq!(to_bits(&5u8.into(), Radix::Binary).to_string(), "101");
        assert_eq!(to_bits(&0u8.into(), Radix::Binary).to_string(), "0");
    }

    #[test]
    fn to_bits_of_worked_scaled_value() {
        let n = BigUint::from(9_886_884_043_440u64);
        let expect = binary_by_repeated_division(&n);
        assert_eq!(expect.len(), 44);
        assert_eq!(
            expect,
            "10001111110111111000001101100001101010110000"
        );
        assert_eq!(to_bits(&n, Radix::Binary).to_string(), expect);
    }

    #[test]
    fn to_bits_fixed_width_groups() {
        // 9 = 11 octal -> 001 001; 255 = ff hex -> 1111 1111
        assert_eq!(to_bits(&9u8.into(), Radix::Octal).to_string(), "001001");
        assert_eq!(to_bits(&255u16.into(), Radix::Hex).to_string(), "11111111");
        assert_eq!(to_bits(&0u8.into(), Radix::Octal).to_string(), "000");
        assert_eq!(to_bits(&0u8.into(), Radix::Hex).to_string(), "0000");
    }

    #[test]
    fn radix_rejects_unsupported_values() {
        assert_eq!(Radix::try_from(10), Err(CodecError::UnsupportedRadix(10)));
        assert!(Radix::try_from(2).is_ok());
    }

    #[test]
    fn from_bits_examples() {
        assert_eq!(from_bits(&bits("101")).unwrap(), BigUint::from(5u8));
        assert_eq!(from_bits(&bits("0001")).unwrap(), BigUint::from(1u8));
        assert_eq!(from_bits(&BitString::new()), Err(CodecError::EmptyBits));
    }

    #[test]
    fn round_trip_exhaustive_16_bit() {
        for k in 0u32..1 << 16 {
            let n = BigUint::from(k);
            assert_eq!(from_bits(&to_bits(&n, Radix::Binary)).unwrap(), n);
        }
    }

    #[test]
    fn octal_and_hex_round_trip() {
        for k in [0u32, 1, 7, 8, 63, 64, 4095, 1 << 20, u32::MAX] {
            let n = BigUint::from(k);
            assert_eq!(from_bits(&to_bits(&n, Radix::Octal)).unwrap(), n);
            assert_eq!(from_bits(&to_bits(&n, Radix::Hex)).unwrap(), n);
        }
    }

    #[test]
    fn standard_table_matches_published_rows() {
        // Full substitution table, transcribed row by row.
        let rows = [
            ("0000", "11110"),
            ("0001", "01001"),
            ("0010", "10100"),
            ("0011", "10101"),
            ("0100", "01010"),
            ("0101", "01011"),
            ("0110", "01110"),
            ("0111", "01111"),
            ("1000", "10010"),
            ("1001", "10011"),
            ("1010", "10110"),
            ("1011", "10111"),
            ("1100", "11010"),
            ("1101", "11011"),
            ("1110", "11100"),
            ("1111", "11101"),
        ];
        for (nibble, symbol) in rows {
            assert_eq!(encode_4b5b(&bits(nibble)).to_string(), symbol);
            assert_eq!(decode_4b5b(&bits(symbol)).unwrap().to_string(), nibble);
        }
    }

    #[test]
    fn encode_left_pads_to_nibble() {
        // "110" pads to "0110" -> symbol 01110
        assert_eq!(encode_4b5b(&bits("110")).to_string(), "01110");
    }

    #[test]
    fn decode_rejects_invalid_symbol() {
        assert_eq!(
            decode_4b5b(&bits("11111")),
            Err(CodecError::InvalidSymbol {
                index: 0,
                symbol: "11111".into()
            })
        );
        // Error names the offending group, not just the first.
        assert_eq!(
            decode_4b5b(&bits("1111011111")),
            Err(CodecError::InvalidSymbol {
                index: 1,
                symbol: "11111".into()
            })
        );
    }

    #[test]
    fn decode_rejects_bad_framing() {
        assert_eq!(decode_4b5b(&bits("1111")), Err(CodecError::Framing(4)));
    }

    #[test]
    fn encode_injective_on_equal_length_inputs() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for v in 0u16..256 {
            let input = BitString::from_bits((0..8).rev().map(|s| ((v >> s) & 1) as u8));
            assert!(seen.insert(encode_4b5b(&input)), "collision at {v:#010b}");
        }
    }

    #[test]
    fn symbols_bound_leading_and_trailing_zeros() {
        // Table property: at most one leading zero and two trailing zeros
        // per symbol, checked against the table contents as given.
        for sym in STANDARD_SYMBOLS {
            let s = format!("{sym:05b}");
            assert!(!s.starts_with("00"), "symbol {s} has two leading zeros");
            assert!(!s.ends_with("000"), "symbol {s} has three trailing zeros");
        }
    }

    #[test]
    fn custom_table_validation() {
        let mut dup = STANDARD_SYMBOLS;
        dup[1] = dup[0];
        assert_eq!(
            NibbleTable::new(dup),
            Err(CodecError::DuplicateSymbol(0b11110))
        );
        let mut wide = STANDARD_SYMBOLS;
        wide[3] = 32;
        assert_eq!(NibbleTable::new(wide), Err(CodecError::SymbolOutOfRange(32)));
    }

    #[test]
    fn hex_packing_round_trips() {
        for s in ["", "1", "0", "10100101", "000011110000", "1011011"] {
            let b = bits(s);
            assert_eq!(BitString::from_hex(&b.to_hex(), b.len()).unwrap(), b);
        }
    }

    #[test]
    fn from_bits_matches_str_radix_oracle() {
        for s in ["1", "0", "00101101", "1111111111111111", "010"] {
            assert_eq!(
                from_bits(&bits(s)).unwrap(),
                BigUint::from_str_radix(s, 2).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn decode_encode_is_left_pad_identity(raw in proptest::collection::vec(0u8..2, 0..64)) {
            let input = BitString::from_bits(raw);
            let coded = encode_4b5b(&input);
            let decoded = decode_4b5b(&coded).unwrap();
            prop_assert_eq!(decoded, input.left_pad(input.len().div_ceil(4) * 4));
        }

        #[test]
        fn round_trip_random_u64(n in any::<u64>()) {
            let big = BigUint::from(n);
            prop_assert_eq!(from_bits(&to_bits(&big, Radix::Binary)).unwrap(), big);
        }

        #[test]
        fn display_parse_round_trip(raw in proptest::collection::vec(0u8..2, 0..80)) {
            let b = BitString::from_bits(raw);
            prop_assert_eq!(b.to_string().parse::<BitString>().unwrap(), b);
        }
    }
}
