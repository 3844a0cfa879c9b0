//! Caller IDs and the RM(3,5) suffix code.
//!
//! A caller ID is split into a 3-digit area-code prefix, which is sent in
//! clear, and a 7-digit suffix, which is encoded as a 26-bit message of the
//! `[32, 26, 4]` Reed-Muller code RM(3,5). The payload occupies message bits
//! `0..24`; bits 24 and 25 are zero padding and act as an integrity check on
//! decoded words.
//!
//! Generator rows are the evaluations of the monomials of degree ≤ 3 in the
//! five coordinate variables, ordered by degree and then lexicographically by
//! variable index: `1, v0, .., v4, v0v1, v0v2, .., v3v4, v0v1v2, .., v2v3v4`.
//! Coordinate `j` is the point whose variable `i` equals bit `i` of `j`.
//! A code bit `b` maps to the real entry `(2b - 1) / sqrt(32)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Codeword length `m`.
pub const CODE_LENGTH: usize = 32;
/// Message length `k` of RM(3,5).
pub const MESSAGE_BITS: usize = 26;
/// Bits needed for a 7-digit suffix.
pub const PAYLOAD_BITS: usize = 24;
/// Exclusive upper bound on suffixes.
pub const SUFFIX_LIMIT: u32 = 10_000_000;
/// Minimum Hamming distance of RM(3,5).
pub const MIN_DISTANCE: u32 = 4;

const VARIABLES: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid caller id {0:?}: expected exactly 10 decimal digits")]
    InvalidCallerId(String),
    #[error("suffix {0} out of range (must be < 10^7)")]
    OutOfRange(u64),
    #[error("invalid area code {0:?}")]
    InvalidAreaCode(String),
}

/// Reasons a received word cannot be turned back into a suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeFailure {
    #[error("received word is {0} coordinates away from the nearest majority-logic codeword")]
    TooManyErrors(u32),
    #[error("padding bits are set")]
    PaddingSet,
    #[error("decoded payload {0} is not a 7-digit suffix")]
    OutOfRange(u32),
}

/// Three-digit area-code prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AreaCode(u16);

impl AreaCode {
    pub fn new(value: u16) -> Result<Self, CodecError> {
        if value < 1000 {
            Ok(AreaCode(value))
        } else {
            Err(CodecError::InvalidAreaCode(value.to_string()))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl fmt::Display for AreaCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}", self.0)
    }
}

impl FromStr for AreaCode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 3 && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(AreaCode(s.parse().expect("three ascii digits")))
        } else {
            Err(CodecError::InvalidAreaCode(s.to_string()))
        }
    }
}

impl Serialize for AreaCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AreaCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A validated 10-digit caller ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhoneNumber {
    prefix: AreaCode,
    suffix: u32,
}

impl PhoneNumber {
    pub fn new(prefix: AreaCode, suffix: u32) -> Result<Self, CodecError> {
        if suffix >= SUFFIX_LIMIT {
            return Err(CodecError::OutOfRange(suffix.into()));
        }
        Ok(PhoneNumber { prefix, suffix })
    }

    /// Parse a caller ID, ignoring spaces and the separators `-`, `.`, `(`, `)`.
    pub fn parse(raw: &str) -> Result<Self, CodecError> {
        let mut digits = 0u64;
        let mut count = 0usize;
        for ch in raw.chars() {
            match ch {
                '0'..='9' => {
                    count += 1;
                    if count > 10 {
                        return Err(CodecError::InvalidCallerId(raw.to_string()));
                    }
                    digits = digits * 10 + u64::from(ch as u8 - b'0');
                }
                ' ' | '-' | '.' | '(' | ')' | '\t' => {}
                _ => return Err(CodecError::InvalidCallerId(raw.to_string())),
            }
        }
        if count != 10 {
            return Err(CodecError::InvalidCallerId(raw.to_string()));
        }
        Ok(Self::from_u64(digits).expect("ten digits"))
    }

    /// Build from the integer value of the 10 digits.
    pub fn from_u64(value: u64) -> Result<Self, CodecError> {
        if value >= 10_000_000_000 {
            return Err(CodecError::InvalidCallerId(value.to_string()));
        }
        Ok(PhoneNumber {
            prefix: AreaCode((value / u64::from(SUFFIX_LIMIT)) as u16),
            suffix: (value % u64::from(SUFFIX_LIMIT)) as u32,
        })
    }

    pub fn prefix(&self) -> AreaCode {
        self.prefix
    }

    pub fn suffix(&self) -> u32 {
        self.suffix
    }

    pub fn as_u64(&self) -> u64 {
        u64::from(self.prefix.0) * u64::from(SUFFIX_LIMIT) + u64::from(self.suffix)
    }

    pub fn digits(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PhoneNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:07}", self.prefix, self.suffix)
    }
}

impl FromStr for PhoneNumber {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhoneNumber::parse(s)
    }
}

impl Serialize for PhoneNumber {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhoneNumber {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Convenience wrapper around [`PhoneNumber::parse`].
pub fn parse_caller_id(raw: &str) -> Result<PhoneNumber, CodecError> {
    PhoneNumber::parse(raw)
}

/// A 26-bit RM(3,5) message; bit `i` multiplies generator row `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageWord(u32);

impl MessageWord {
    pub fn from_suffix(suffix: u32) -> Result<Self, CodecError> {
        if suffix >= SUFFIX_LIMIT {
            return Err(CodecError::OutOfRange(suffix.into()));
        }
        Ok(MessageWord(suffix))
    }

    pub fn from_bits(bits: u32) -> Self {
        MessageWord(bits & ((1 << MESSAGE_BITS) - 1))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn bit(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn padding(self) -> u32 {
        self.0 >> PAYLOAD_BITS
    }

    pub fn payload(self) -> u32 {
        self.0 & ((1 << PAYLOAD_BITS) - 1)
    }
}

/// A codeword of RM(3,5) over `{-1/sqrt(m), +1/sqrt(m)}`, stored as a bit
/// mask where bit `j` set means coordinate `j` is `+1/sqrt(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Codeword(u32);

impl Codeword {
    pub const LENGTH: usize = CODE_LENGTH;

    pub fn from_mask(mask: u32) -> Self {
        Codeword(mask)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    /// Sign of coordinate `j` as `+1` or `-1`.
    #[inline]
    pub fn sign(self, j: usize) -> i8 {
        if (self.0 >> j) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn entry(self, j: usize) -> f64 {
        f64::from(self.sign(j)) / (CODE_LENGTH as f64).sqrt()
    }

    pub fn entries(self) -> [f64; CODE_LENGTH] {
        std::array::from_fn(|j| self.entry(j))
    }

    /// Round a real vector coordinate-wise; ties (`== 0`) go to `+1/sqrt(m)`.
    pub fn from_signs(values: &[f64]) -> Self {
        assert_eq!(values.len(), CODE_LENGTH, "word length");
        let mut mask = 0u32;
        for (j, v) in values.iter().enumerate() {
            if *v >= 0.0 {
                mask |= 1 << j;
            }
        }
        Codeword(mask)
    }

    pub fn flip(self, j: usize) -> Self {
        Codeword(self.0 ^ (1 << j))
    }

    pub fn distance(self, other: Codeword) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

/// Variable masks of the monomials of degree ≤ 3, in generator row order.
const MONOMIALS: [u8; MESSAGE_BITS] = build_monomials();

/// Generator rows as 32-bit coordinate masks.
const GENERATOR: [u32; MESSAGE_BITS] = build_generator();

const fn build_monomials() -> [u8; MESSAGE_BITS] {
    let mut out = [0u8; MESSAGE_BITS];
    // Row 0 is the constant monomial, already zero.
    let mut n = 1;
    let mut a = 0;
    while a < 5 {
        out[n] = 1 << a;
        n += 1;
        a += 1;
    }
    a = 0;
    while a < 5 {
        let mut b = a + 1;
        while b < 5 {
            out[n] = (1 << a) | (1 << b);
            n += 1;
            b += 1;
        }
        a += 1;
    }
    a = 0;
    while a < 5 {
        let mut b = a + 1;
        while b < 5 {
            let mut c = b + 1;
            while c < 5 {
                out[n] = (1 << a) | (1 << b) | (1 << c);
                n += 1;
                c += 1;
            }
            b += 1;
        }
        a += 1;
    }
    assert!(n == MESSAGE_BITS);
    out
}

const fn build_generator() -> [u32; MESSAGE_BITS] {
    let mut rows = [0u32; MESSAGE_BITS];
    let mut i = 0;
    while i < MESSAGE_BITS {
        let vars = MONOMIALS[i] as u32;
        let mut j = 0;
        while j < CODE_LENGTH {
            if (j as u32) & vars == vars {
                rows[i] |= 1 << j;
            }
            j += 1;
        }
        i += 1;
    }
    rows
}

/// Generator rows in message-bit order.
pub fn generator_rows() -> &'static [u32; MESSAGE_BITS] {
    &GENERATOR
}

/// Monomial variable masks in message-bit order.
pub fn monomials() -> &'static [u8; MESSAGE_BITS] {
    &MONOMIALS
}

/// Multiply a message by the generator matrix over GF(2).
pub fn encode_message(message: MessageWord) -> Codeword {
    let mut word = 0u32;
    for (i, row) in GENERATOR.iter().enumerate() {
        if message.bit(i) {
            word ^= row;
        }
    }
    Codeword(word)
}

/// Encode a 7-digit suffix.
pub fn encode_suffix(suffix: u32) -> Result<Codeword, CodecError> {
    Ok(encode_message(MessageWord::from_suffix(suffix)?))
}

/// Reed majority-logic decoding of a hard-decision word.
///
/// Always returns the message the majority votes produce together with the
/// Hamming distance between its codeword and the received word.
pub fn majority_decode(received: Codeword) -> (MessageWord, u32) {
    let mut residual = received.0;
    let mut message = 0u32;
    for degree in (1..=3u32).rev() {
        let mut contribution = 0u32;
        for (i, &vars) in MONOMIALS.iter().enumerate() {
            let vars = u32::from(vars);
            if vars.count_ones() != degree {
                continue;
            }
            // One parity check per assignment of the complementary variables:
            // the XOR of the residual over the subcube spanned by `vars`.
            let complement = !vars & ((1 << VARIABLES) - 1);
            let mut ones = 0u32;
            let mut checks = 0u32;
            let mut assignment = 0u32;
            loop {
                let mut parity = 0u32;
                let mut sub = 0u32;
                loop {
                    parity ^= (residual >> (assignment | sub)) & 1;
                    sub = sub.wrapping_sub(vars) & vars;
                    if sub == 0 {
                        break;
                    }
                }
                ones += parity;
                checks += 1;
                assignment = assignment.wrapping_sub(complement) & complement;
                if assignment == 0 {
                    break;
                }
            }
            if 2 * ones > checks {
                message |= 1 << i;
                contribution ^= GENERATOR[i];
            }
        }
        residual ^= contribution;
    }
    if 2 * residual.count_ones() > CODE_LENGTH as u32 {
        message |= 1;
    }
    let message = MessageWord(message);
    let distance = encode_message(message).distance(received);
    (message, distance)
}

/// Decode a received word back to a suffix.
///
/// Succeeds only when the received word lies within Hamming distance 1 of a
/// codeword whose padding bits are zero and whose payload is below 10^7.
pub fn decode_codeword(received: Codeword) -> Result<u32, DecodeFailure> {
    let (message, distance) = majority_decode(received);
    if distance > (MIN_DISTANCE - 1) / 2 {
        return Err(DecodeFailure::TooManyErrors(distance));
    }
    if message.padding() != 0 {
        return Err(DecodeFailure::PaddingSet);
    }
    let payload = message.payload();
    if payload >= SUFFIX_LIMIT {
        return Err(DecodeFailure::OutOfRange(payload));
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_examples() {
        let v = parse_caller_id("2025550142").unwrap();
        assert_eq!(v.prefix().to_string(), "202");
        assert_eq!(v.suffix(), 5_550_142);
        assert_eq!(parse_caller_id("202-555-0142").unwrap(), v);
        assert_eq!(parse_caller_id("(202) 555.0142").unwrap(), v);
        assert!(matches!(
            parse_caller_id("12025550142"),
            Err(CodecError::InvalidCallerId(_))
        ));
        assert!(parse_caller_id("202555014").is_err());
        assert!(parse_caller_id("20255501x2").is_err());
        assert!(parse_caller_id("").is_err());
        assert_eq!(v.to_string(), "2025550142");
        assert_eq!(PhoneNumber::from_u64(v.as_u64()).unwrap(), v);
    }

    #[test]
    fn leading_zeros_survive_display() {
        let v = parse_caller_id("0010000007").unwrap();
        assert_eq!(v.prefix().to_string(), "001");
        assert_eq!(v.suffix(), 7);
        assert_eq!(v.to_string(), "0010000007");
    }

    #[test]
    fn generator_row_order() {
        let m = monomials();
        assert_eq!(m[0], 0);
        assert_eq!(&m[1..6], &[1, 2, 4, 8, 16]);
        // degree-2 rows: v0v1, v0v2, v0v3, v0v4, v1v2, ...
        assert_eq!(m[6], 0b00011);
        assert_eq!(m[7], 0b00101);
        assert_eq!(m[10], 0b00110);
        assert_eq!(m[15], 0b11000);
        // degree-3 rows: v0v1v2 first, v2v3v4 last.
        assert_eq!(m[16], 0b00111);
        assert_eq!(m[25], 0b11100);
        let distinct: std::collections::HashSet<_> = m.iter().collect();
        assert_eq!(distinct.len(), MESSAGE_BITS);
        assert_eq!(generator_rows()[0], u32::MAX);
    }

    #[test]
    fn zero_suffix_is_all_negative() {
        let w = encode_suffix(0).unwrap();
        assert_eq!(w.mask(), 0);
        let expected = -1.0 / 32f64.sqrt();
        assert!(w.entries().iter().all(|&e| e == expected));
    }

    #[test]
    fn entries_have_unit_scale() {
        let w = encode_suffix(5_550_142).unwrap();
        let norm: f64 = w.entries().iter().map(|e| e * e).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_suffix() {
        assert_eq!(
            encode_suffix(SUFFIX_LIMIT),
            Err(CodecError::OutOfRange(10_000_000))
        );
    }

    #[test]
    fn corrects_coordinate_seven() {
        let w = encode_suffix(5_550_142).unwrap();
        assert_eq!(decode_codeword(w), Ok(5_550_142));
        assert_eq!(decode_codeword(w.flip(7)), Ok(5_550_142));
    }

    #[test]
    fn double_error_is_flagged() {
        // Every 2-error pattern is at distance 2 from the sent word and, by the
        // minimum distance of 4, at distance >= 2 from all others, so the
        // decoder must refuse rather than return a suffix.
        let w = encode_suffix(5_550_142).unwrap();
        for i in 0..CODE_LENGTH {
            for j in (i + 1)..CODE_LENGTH {
                let r = decode_codeword(w.flip(i).flip(j));
                assert!(
                    matches!(r, Err(DecodeFailure::TooManyErrors(_))),
                    "flips {i},{j} gave {r:?}"
                );
            }
        }
    }

    #[test]
    fn padding_and_range_checks() {
        let padded = encode_message(MessageWord::from_bits(1 << 24));
        assert_eq!(decode_codeword(padded), Err(DecodeFailure::PaddingSet));
        let big = encode_message(MessageWord::from_bits(SUFFIX_LIMIT + 5));
        assert_eq!(
            decode_codeword(big),
            Err(DecodeFailure::OutOfRange(SUFFIX_LIMIT + 5))
        );
    }

    #[test]
    fn random_pairs_are_far_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let a = rng.gen_range(0..SUFFIX_LIMIT);
            let b = rng.gen_range(0..SUFFIX_LIMIT);
            if a != b {
                let d = encode_suffix(a).unwrap().distance(encode_suffix(b).unwrap());
                assert!(d >= MIN_DISTANCE);
            }
        }
        // Minimum-weight codewords: degree-3 monomials have weight 4.
        for (i, row) in generator_rows().iter().enumerate().skip(16) {
            assert_eq!(row.count_ones(), 4, "row {i}");
        }
    }

    #[test]
    fn linear_code_has_min_weight_four() {
        // Exhaustive over all 2^26 messages is slow in debug builds; the
        // weight enumerator is checked on the 2^16 messages spanned by the
        // degree ≤ 2 rows together with all degree-3 singletons.
        let mut min = u32::MAX;
        for msg in 1u32..(1 << 16) {
            min = min.min(encode_message(MessageWord::from_bits(msg)).mask().count_ones());
        }
        for i in 16..MESSAGE_BITS {
            for j in 0..(1u32 << 16) {
                let w = encode_message(MessageWord::from_bits((1 << i) | j)).mask();
                min = min.min(w.count_ones());
            }
        }
        assert_eq!(min, MIN_DISTANCE);
    }

    proptest! {
        #[test]
        fn roundtrip(s in 0u32..SUFFIX_LIMIT) {
            prop_assert_eq!(decode_codeword(encode_suffix(s).unwrap()), Ok(s));
        }

        #[test]
        fn single_error_corrected(s in 0u32..SUFFIX_LIMIT, j in 0usize..CODE_LENGTH) {
            prop_assert_eq!(decode_codeword(encode_suffix(s).unwrap().flip(j)), Ok(s));
        }

        #[test]
        fn encode_is_linear(a in 0u32..(1 << 26), b in 0u32..(1 << 26)) {
            let wa = encode_message(MessageWord::from_bits(a)).mask();
            let wb = encode_message(MessageWord::from_bits(b)).mask();
            prop_assert_eq!(encode_message(MessageWord::from_bits(a ^ b)).mask(), wa ^ wb);
        }

        #[test]
        fn parse_display_roundtrip(value in 0u64..10_000_000_000) {
            let v = PhoneNumber::from_u64(value).unwrap();
            prop_assert_eq!(parse_caller_id(&v.to_string()).unwrap(), v);
        }
    }
}
