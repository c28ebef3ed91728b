//! Fixed-width machine words, addresses, Keccak-256 and the RLP subset used
//! for contract address derivation.
//!
//! [`Uint<N>`] stores `N` little-endian 64-bit limbs. [`Word256`] is the EVM
//! word; [`Word512`] is used wherever an intermediate result (gas costs,
//! modular products) may exceed 256 bits.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{BitAnd, BitOr, BitXor, Not, Shl, Shr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::Digest;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("empty numeric literal")]
    Empty,
    #[error("invalid digit {0:?} in numeric literal")]
    InvalidDigit(char),
    #[error("numeric literal does not fit in {0} bits")]
    Overflow(u32),
    #[error("address literal must have at most 40 hex digits")]
    AddressTooLong,
    #[error("invalid hex string: {0}")]
    Hex(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Uint<const N: usize>(pub [u64; N]);

pub type Word256 = Uint<4>;
pub type Word512 = Uint<8>;

impl<const N: usize> Default for Uint<N> {
    fn default() -> Self {
        Self::ZERO
    }
}

impl<const N: usize> Uint<N> {
    pub const ZERO: Self = Uint([0; N]);
    pub const MAX: Self = Uint([u64::MAX; N]);
    pub const BITS: u32 = 64 * N as u32;

    pub const fn from_u64(v: u64) -> Self {
        let mut limbs = [0u64; N];
        limbs[0] = v;
        Uint(limbs)
    }

    pub const fn one() -> Self {
        Self::from_u64(1)
    }

    pub fn from_u128(v: u128) -> Self {
        let mut limbs = [0u64; N];
        limbs[0] = v as u64;
        if N > 1 {
            limbs[1] = (v >> 64) as u64;
        }
        Uint(limbs)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&l| l == 0)
    }

    pub fn low_u64(&self) -> u64 {
        self.0[0]
    }

    pub fn to_u64(&self) -> Option<u64> {
        if self.0[1..].iter().all(|&l| l == 0) {
            Some(self.0[0])
        } else {
            None
        }
    }

    pub fn to_usize(&self) -> Option<usize> {
        self.to_u64().and_then(|v| usize::try_from(v).ok())
    }

    /// Number of significant bits (0 for zero).
    pub fn bits(&self) -> u32 {
        for i in (0..N).rev() {
            if self.0[i] != 0 {
                return 64 * i as u32 + (64 - self.0[i].leading_zeros());
            }
        }
        0
    }

    pub fn bit(&self, i: u32) -> bool {
        if i >= Self::BITS {
            return false;
        }
        (self.0[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }

    fn set_bit(&mut self, i: u32) {
        self.0[(i / 64) as usize] |= 1 << (i % 64);
    }

    pub fn overflowing_add(self, rhs: Self) -> (Self, bool) {
        let mut out = [0u64; N];
        let mut carry = false;
        for (i, slot) in out.iter_mut().enumerate() {
            let (s1, c1) = self.0[i].overflowing_add(rhs.0[i]);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *slot = s2;
            carry = c1 || c2;
        }
        (Uint(out), carry)
    }

    pub fn overflowing_sub(self, rhs: Self) -> (Self, bool) {
        let mut out = [0u64; N];
        let mut borrow = false;
        for (i, slot) in out.iter_mut().enumerate() {
            let (d1, b1) = self.0[i].overflowing_sub(rhs.0[i]);
            let (d2, b2) = d1.overflowing_sub(borrow as u64);
            *slot = d2;
            borrow = b1 || b2;
        }
        (Uint(out), borrow)
    }

    pub fn wrapping_add(self, rhs: Self) -> Self {
        self.overflowing_add(rhs).0
    }

    pub fn wrapping_sub(self, rhs: Self) -> Self {
        self.overflowing_sub(rhs).0
    }

    pub fn checked_add(self, rhs: Self) -> Option<Self> {
        match self.overflowing_add(rhs) {
            (v, false) => Some(v),
            _ => None,
        }
    }

    pub fn checked_sub(self, rhs: Self) -> Option<Self> {
        match self.overflowing_sub(rhs) {
            (v, false) => Some(v),
            _ => None,
        }
    }

    pub fn saturating_add(self, rhs: Self) -> Self {
        self.checked_add(rhs).unwrap_or(Self::MAX)
    }

    pub fn saturating_sub(self, rhs: Self) -> Self {
        self.checked_sub(rhs).unwrap_or(Self::ZERO)
    }

    /// Product together with an overflow flag; the value is the product mod 2^(64N).
    pub fn overflowing_mul(self, rhs: Self) -> (Self, bool) {
        let mut out = [0u64; N];
        let mut overflow = false;
        for i in 0..N {
            if self.0[i] == 0 {
                continue;
            }
            let mut carry: u128 = 0;
            for j in 0..N {
                let prod = self.0[i] as u128 * rhs.0[j] as u128;
                if i + j < N {
                    let cur = out[i + j] as u128 + prod + carry;
                    out[i + j] = cur as u64;
                    carry = cur >> 64;
                } else if prod != 0 || carry != 0 {
                    overflow = true;
                    carry = 0;
                }
            }
            if carry != 0 {
                overflow = true;
            }
        }
        (Uint(out), overflow)
    }

    pub fn wrapping_mul(self, rhs: Self) -> Self {
        self.overflowing_mul(rhs).0
    }

    pub fn checked_mul(self, rhs: Self) -> Option<Self> {
        match self.overflowing_mul(rhs) {
            (v, false) => Some(v),
            _ => None,
        }
    }

    pub fn div_rem_u64(self, d: u64) -> (Self, u64) {
        assert!(d != 0, "division by zero");
        let mut out = [0u64; N];
        let mut rem: u128 = 0;
        for i in (0..N).rev() {
            let cur = (rem << 64) | self.0[i] as u128;
            out[i] = (cur / d as u128) as u64;
            rem = cur % d as u128;
        }
        (Uint(out), rem as u64)
    }

    /// Quotient and remainder; `None` when `rhs` is zero.
    pub fn checked_div_rem(self, rhs: Self) -> Option<(Self, Self)> {
        if rhs.is_zero() {
            return None;
        }
        if let Some(d) = rhs.to_u64() {
            let (q, r) = self.div_rem_u64(d);
            return Some((q, Self::from_u64(r)));
        }
        if self < rhs {
            return Some((Self::ZERO, self));
        }
        let mut q = Self::ZERO;
        let mut r = Self::ZERO;
        for i in (0..self.bits()).rev() {
            r = r.shl(1);
            if self.bit(i) {
                r.0[0] |= 1;
            }
            if r >= rhs {
                r = r.wrapping_sub(rhs);
                q.set_bit(i);
            }
        }
        Some((q, r))
    }

    /// Zero-extends or truncates to `M` limbs.
    pub fn resize<const M: usize>(self) -> Uint<M> {
        let mut out = [0u64; M];
        for (i, slot) in out.iter_mut().enumerate().take(N) {
            *slot = self.0[i];
        }
        Uint(out)
    }

    /// Narrows to `M` limbs when the value fits.
    pub fn try_resize<const M: usize>(self) -> Option<Uint<M>> {
        if self.bits() > 64 * M as u32 {
            None
        } else {
            Some(self.resize())
        }
    }

    /// Interprets big-endian bytes, keeping the value modulo 2^(64N).
    pub fn from_be_slice(bytes: &[u8]) -> Self {
        let mut out = [0u64; N];
        for (k, &b) in bytes.iter().rev().enumerate().take(8 * N) {
            out[k / 8] |= (b as u64) << (8 * (k % 8));
        }
        Uint(out)
    }

    pub fn to_be_vec(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * N);
        for limb in self.0.iter().rev() {
            out.extend_from_slice(&limb.to_be_bytes());
        }
        out
    }

    /// Big-endian bytes without leading zeros (empty for zero).
    pub fn to_be_minimal(&self) -> Vec<u8> {
        let full = self.to_be_vec();
        let start = full.iter().position(|&b| b != 0).unwrap_or(full.len());
        full[start..].to_vec()
    }

    /// Exponentiation modulo 2^(64N).
    pub fn wrapping_pow(self, exp: Self) -> Self {
        let mut result = Self::one();
        let mut base = self;
        for i in 0..exp.bits() {
            if exp.bit(i) {
                result = result.wrapping_mul(base);
            }
            base = base.wrapping_mul(base);
        }
        result
    }

    /// Ceiling division by a small divisor.
    pub fn div_ceil_u64(self, d: u64) -> Self {
        let (q, r) = self.div_rem_u64(d);
        if r == 0 {
            q
        } else {
            q.wrapping_add(Self::one())
        }
    }

    fn mul_small_add(self, m: u64, a: u64) -> Option<Self> {
        let mut out = [0u64; N];
        let mut carry = a as u128;
        for (i, slot) in out.iter_mut().enumerate() {
            let cur = self.0[i] as u128 * m as u128 + carry;
            *slot = cur as u64;
            carry = cur >> 64;
        }
        if carry == 0 {
            Some(Uint(out))
        } else {
            None
        }
    }

    /// Parses `0x`-prefixed hex or plain decimal.
    pub fn parse_literal(s: &str) -> Result<Self, WordError> {
        let s = s.trim();
        let (digits, radix) = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            Some(rest) => (rest, 16u32),
            None => (s, 10u32),
        };
        if digits.is_empty() {
            return Err(WordError::Empty);
        }
        let mut acc = Self::ZERO;
        for ch in digits.chars() {
            if ch == '_' {
                continue;
            }
            let d = ch.to_digit(radix).ok_or(WordError::InvalidDigit(ch))?;
            acc = acc.mul_small_add(radix as u64, d as u64).ok_or(WordError::Overflow(Self::BITS))?;
        }
        Ok(acc)
    }
}

impl<const N: usize> Ord for Uint<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        for i in (0..N).rev() {
            match self.0[i].cmp(&other.0[i]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

impl<const N: usize> PartialOrd for Uint<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<const N: usize> Shl<u32> for Uint<N> {
    type Output = Self;

    fn shl(self, shift: u32) -> Self {
        if shift >= Self::BITS {
            return Self::ZERO;
        }
        let limbs = (shift / 64) as usize;
        let bits = shift % 64;
        let mut out = [0u64; N];
        for i in (limbs..N).rev() {
            let mut v = self.0[i - limbs] << bits;
            if bits > 0 && i > limbs {
                v |= self.0[i - limbs - 1] >> (64 - bits);
            }
            out[i] = v;
        }
        Uint(out)
    }
}

impl<const N: usize> Shr<u32> for Uint<N> {
    type Output = Self;

    fn shr(self, shift: u32) -> Self {
        if shift >= Self::BITS {
            return Self::ZERO;
        }
        let limbs = (shift / 64) as usize;
        let bits = shift % 64;
        let mut out = [0u64; N];
        for (i, slot) in out.iter_mut().enumerate().take(N - limbs) {
            let mut v = self.0[i + limbs] >> bits;
            if bits > 0 && i + limbs + 1 < N {
                v |= self.0[i + limbs + 1] << (64 - bits);
            }
            *slot = v;
        }
        Uint(out)
    }
}

impl<const N: usize> BitAnd for Uint<N> {
    type Output = Self;
    fn bitand(self, rhs: Self) -> Self {
        Uint(std::array::from_fn(|i| self.0[i] & rhs.0[i]))
    }
}

impl<const N: usize> BitOr for Uint<N> {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        Uint(std::array::from_fn(|i| self.0[i] | rhs.0[i]))
    }
}

impl<const N: usize> BitXor for Uint<N> {
    type Output = Self;
    fn bitxor(self, rhs: Self) -> Self {
        Uint(std::array::from_fn(|i| self.0[i] ^ rhs.0[i]))
    }
}

impl<const N: usize> Not for Uint<N> {
    type Output = Self;
    fn not(self) -> Self {
        Uint(std::array::from_fn(|i| !self.0[i]))
    }
}

impl<const N: usize> From<u64> for Uint<N> {
    fn from(v: u64) -> Self {
        Self::from_u64(v)
    }
}

impl<const N: usize> fmt::LowerHex for Uint<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bytes = self.to_be_minimal();
        if bytes.is_empty() {
            return f.write_str("0");
        }
        let s = hex::encode(bytes);
        f.write_str(s.trim_start_matches('0'))
    }
}

impl<const N: usize> fmt::Display for Uint<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}", self)
    }
}

impl<const N: usize> fmt::Debug for Uint<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl<const N: usize> FromStr for Uint<N> {
    type Err = WordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_literal(s)
    }
}

impl<const N: usize> Serialize for Uint<N> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, const N: usize> Deserialize<'de> for Uint<N> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Lit {
            Num(u64),
            Str(String),
        }
        match Lit::deserialize(d)? {
            Lit::Num(n) => Ok(Self::from_u64(n)),
            Lit::Str(s) => Self::parse_literal(&s).map_err(serde::de::Error::custom),
        }
    }
}

impl Word256 {
    pub fn from_be_bytes(bytes: [u8; 32]) -> Self {
        Self::from_be_slice(&bytes)
    }

    pub fn to_be_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, limb) in self.0.iter().rev().enumerate() {
            out[8 * i..8 * i + 8].copy_from_slice(&limb.to_be_bytes());
        }
        out
    }

    /// Full 512-bit product.
    pub fn widening_mul(self, rhs: Self) -> Word512 {
        self.resize::<8>().wrapping_mul(rhs.resize())
    }

    pub fn is_negative(&self) -> bool {
        self.bit(255)
    }

    pub fn wrapping_neg(self) -> Self {
        (!self).wrapping_add(Self::one())
    }

    /// Two's-complement view as (is_negative, magnitude).
    pub fn to_signed_parts(self) -> (bool, Word256) {
        if self.is_negative() {
            (true, self.wrapping_neg())
        } else {
            (false, self)
        }
    }

    /// Inverse of [`Word256::to_signed_parts`], taken modulo 2^256.
    pub fn from_signed_parts(negative: bool, magnitude: Word256) -> Self {
        if negative {
            magnitude.wrapping_neg()
        } else {
            magnitude
        }
    }

    pub fn signed_cmp(&self, other: &Self) -> Ordering {
        match (self.is_negative(), other.is_negative()) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self.cmp(other),
        }
    }

    /// The `i`-th byte counting from the most significant end.
    pub fn byte_be(&self, i: usize) -> u8 {
        if i >= 32 {
            0
        } else {
            self.to_be_bytes()[i]
        }
    }

    pub fn from_bool(b: bool) -> Self {
        Self::from_u64(b as u64)
    }
}

/// Binary word operations with EVM semantics. Operand `a` is the top of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Mul,
    Sub,
    Div,
    Sdiv,
    Mod,
    Smod,
    Exp,
    SignExtend,
    Lt,
    Gt,
    Slt,
    Sgt,
    Eq,
    And,
    Or,
    Xor,
    Byte,
}

pub fn binop(op: BinOp, a: Word256, b: Word256) -> Word256 {
    match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Div => a.checked_div_rem(b).map_or(Word256::ZERO, |(q, _)| q),
        BinOp::Mod => a.checked_div_rem(b).map_or(Word256::ZERO, |(_, r)| r),
        BinOp::Sdiv => sdiv(a, b),
        BinOp::Smod => smod(a, b),
        BinOp::Exp => a.wrapping_pow(b),
        BinOp::SignExtend => sign_extend(a, b),
        BinOp::Lt => Word256::from_bool(a < b),
        BinOp::Gt => Word256::from_bool(a > b),
        BinOp::Slt => Word256::from_bool(a.signed_cmp(&b) == Ordering::Less),
        BinOp::Sgt => Word256::from_bool(a.signed_cmp(&b) == Ordering::Greater),
        BinOp::Eq => Word256::from_bool(a == b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Byte => match a.to_usize() {
            Some(i) if i < 32 => Word256::from_u64(b.byte_be(i) as u64),
            _ => Word256::ZERO,
        },
    }
}

/// Signed division truncating toward zero. `-2^255 / -1` wraps to `-2^255`.
fn sdiv(a: Word256, b: Word256) -> Word256 {
    if b.is_zero() {
        return Word256::ZERO;
    }
    let (na, ma) = a.to_signed_parts();
    let (nb, mb) = b.to_signed_parts();
    let (q, _) = ma.checked_div_rem(mb).expect("nonzero divisor");
    Word256::from_signed_parts(na != nb, q)
}

/// Signed remainder carrying the sign of the dividend.
fn smod(a: Word256, b: Word256) -> Word256 {
    if b.is_zero() {
        return Word256::ZERO;
    }
    let (na, ma) = a.to_signed_parts();
    let (_, mb) = b.to_signed_parts();
    let (_, r) = ma.checked_div_rem(mb).expect("nonzero divisor");
    Word256::from_signed_parts(na, r)
}

/// Extends the sign of the `a`-th least significant byte of `b`.
fn sign_extend(a: Word256, b: Word256) -> Word256 {
    let k = match a.to_u64() {
        Some(k) if k < 31 => k as u32,
        _ => return b,
    };
    let sign_bit = 8 * k + 7;
    let mask = (Word256::one() << (sign_bit + 1)).wrapping_sub(Word256::one());
    if b.bit(sign_bit) {
        b | !mask
    } else {
        b & mask
    }
}

pub fn addmod(a: Word256, b: Word256, n: Word256) -> Word256 {
    if n.is_zero() {
        return Word256::ZERO;
    }
    let sum = a.resize::<8>().wrapping_add(b.resize());
    let (_, r) = sum.checked_div_rem(n.resize()).expect("nonzero modulus");
    r.resize()
}

pub fn mulmod(a: Word256, b: Word256, n: Word256) -> Word256 {
    if n.is_zero() {
        return Word256::ZERO;
    }
    let (_, r) = a.widening_mul(b).checked_div_rem(n.resize()).expect("nonzero modulus");
    r.resize()
}

/// A 160-bit account address.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0; 20]);

    /// Keeps the low 160 bits of a word.
    pub fn from_word(w: &Word256) -> Self {
        let bytes = w.to_be_bytes();
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes[12..]);
        Address(out)
    }

    pub fn to_word(&self) -> Word256 {
        Word256::from_be_slice(&self.0)
    }

    pub fn from_low_u64(v: u64) -> Self {
        Self::from_word(&Word256::from_u64(v))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = WordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches("0x").trim_start_matches("0X");
        if digits.len() > 40 {
            return Err(WordError::AddressTooLong);
        }
        let w = Word256::parse_literal(&format!("0x{}", if digits.is_empty() { "0" } else { digits }))?;
        Ok(Address::from_word(&w))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `0x`-prefixed lowercase hex.
pub fn to_hex(bytes: &[u8]) -> String {
    format!("0x{}", hex::encode(bytes))
}

/// Decodes hex with an optional `0x` prefix; whitespace is ignored.
pub fn from_hex(s: &str) -> Result<Vec<u8>, WordError> {
    let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let digits = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
    hex::decode(digits).map_err(|e| WordError::Hex(e.to_string()))
}

/// The hashing interface used by SHA3 and address derivation.
pub trait KeccakHasher {
    fn digest(&self, data: &[u8]) -> [u8; 32];
}

/// Default Keccak-256 backed by the `sha3` crate.
#[derive(Clone, Copy, Debug, Default)]
pub struct Keccak;

impl KeccakHasher for Keccak {
    fn digest(&self, data: &[u8]) -> [u8; 32] {
        sha3::Keccak256::digest(data).into()
    }
}

pub fn keccak256(data: &[u8]) -> Word256 {
    Word256::from_be_bytes(Keccak.digest(data))
}

fn rlp_string(out: &mut Vec<u8>, bytes: &[u8]) {
    if bytes.len() == 1 && bytes[0] < 0x80 {
        out.push(bytes[0]);
    } else {
        rlp_header(out, 0x80, bytes.len());
        out.extend_from_slice(bytes);
    }
}

fn rlp_header(out: &mut Vec<u8>, offset: u8, len: usize) {
    if len <= 55 {
        out.push(offset + len as u8);
    } else {
        let len_bytes = Word256::from_u64(len as u64).to_be_minimal();
        out.push(offset + 55 + len_bytes.len() as u8);
        out.extend_from_slice(&len_bytes);
    }
}

/// RLP encoding of the list `[address, nonce]`, nonce as a minimal big-endian string.
pub fn rlp_address_nonce(a: &Address, nonce: &Word256) -> Vec<u8> {
    let mut payload = Vec::with_capacity(64);
    rlp_string(&mut payload, &a.0);
    rlp_string(&mut payload, &nonce.to_be_minimal());
    let mut out = Vec::with_capacity(payload.len() + 2);
    rlp_header(&mut out, 0xc0, payload.len());
    out.extend_from_slice(&payload);
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RlpError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("expected a list")]
    NotAList,
    #[error("expected a byte string")]
    NotAString,
    #[error("non-canonical encoding")]
    NonCanonical,
    #[error("trailing bytes after item")]
    Trailing,
    #[error("field has wrong width")]
    Width,
}

fn rlp_item(input: &[u8]) -> Result<(bool, &[u8], &[u8]), RlpError> {
    let (&first, rest) = input.split_first().ok_or(RlpError::Truncated)?;
    let (is_list, len, rest) = match first {
        0x00..=0x7f => return Ok((false, &input[..1], rest)),
        0x80..=0xb7 => (false, (first - 0x80) as usize, rest),
        0xc0..=0xf7 => (true, (first - 0xc0) as usize, rest),
        _ => {
            let (is_list, base) = if first >= 0xf8 { (true, 0xf7) } else { (false, 0xb7) };
            let n = (first - base) as usize;
            if rest.len() < n {
                return Err(RlpError::Truncated);
            }
            if n == 0 || rest[0] == 0 {
                return Err(RlpError::NonCanonical);
            }
            let len = Word256::from_be_slice(&rest[..n]).to_usize().ok_or(RlpError::Truncated)?;
            if len <= 55 {
                return Err(RlpError::NonCanonical);
            }
            (is_list, len, &rest[n..])
        }
    };
    if rest.len() < len {
        return Err(RlpError::Truncated);
    }
    let payload = &rest[..len];
    if !is_list && len == 1 && payload[0] < 0x80 {
        return Err(RlpError::NonCanonical);
    }
    Ok((is_list, payload, &rest[len..]))
}

/// Inverse of [`rlp_address_nonce`].
pub fn rlp_decode_address_nonce(input: &[u8]) -> Result<(Address, Word256), RlpError> {
    let (is_list, payload, rest) = rlp_item(input)?;
    if !is_list {
        return Err(RlpError::NotAList);
    }
    if !rest.is_empty() {
        return Err(RlpError::Trailing);
    }
    let (l1, addr, payload) = rlp_item(payload)?;
    let (l2, nonce, payload) = rlp_item(payload)?;
    if l1 || l2 {
        return Err(RlpError::NotAString);
    }
    if !payload.is_empty() {
        return Err(RlpError::Trailing);
    }
    if addr.len() != 20 || nonce.len() > 32 {
        return Err(RlpError::Width);
    }
    if nonce.first() == Some(&0) {
        return Err(RlpError::NonCanonical);
    }
    let mut a = [0u8; 20];
    a.copy_from_slice(addr);
    Ok((Address(a), Word256::from_be_slice(nonce)))
}

/// Address of a contract created by `creator` whose nonce has already been
/// incremented to `nonce`: the low 160 bits of `keccak(rlp(creator, nonce - 1))`.
pub fn fresh_address(creator: &Address, nonce: &Word256) -> Address {
    let prev = nonce.saturating_sub(Word256::one());
    Address::from_word(&keccak256(&rlp_address_nonce(creator, &prev)))
}
