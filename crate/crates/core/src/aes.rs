//! AES-128 encryption (FIPS-197) with an optional recorder for every
//! intermediate state.
//!
//! State bytes are kept in FIPS-197 column-major order, so plaintext byte `i`
//! is state byte `i` and sits at row `i % 4`, column `i / 4`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROUNDS: usize = 10;

#[rustfmt::skip]
const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

const RCON: [u8; ROUNDS] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

/// Forward AES S-box.
#[inline]
pub fn sbox_lookup(b: u8) -> u8 {
    SBOX[b as usize]
}

/// First-round SubBytes output for one byte position: `sbox(pt ^ key)`.
#[inline]
pub fn attack_point_value(pt_byte: u8, key_byte: u8) -> u8 {
    sbox_lookup(pt_byte ^ key_byte)
}

fn parse_hex16(s: &str) -> Result<[u8; 16]> {
    let s = s.trim();
    let mut out = [0u8; 16];
    hex::decode_to_slice(s, &mut out)
        .map_err(|e| Error::Hex(format!("{s:?}: {e} (need 32 hex digits)")))?;
    Ok(out)
}

macro_rules! bytes16 {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub struct $name(pub [u8; 16]);

        impl $name {
            pub const LEN: usize = 16;

            pub fn from_hex(s: &str) -> Result<Self> {
                parse_hex16(s).map($name)
            }

            /// Lowercase, 32 characters.
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; 16] {
                &self.0
            }
        }

        impl From<[u8; 16]> for $name {
            fn from(b: [u8; 16]) -> Self {
                $name(b)
            }
        }

        impl TryFrom<&[u8]> for $name {
            type Error = Error;

            fn try_from(b: &[u8]) -> Result<Self> {
                let arr: [u8; 16] = b.try_into().map_err(|_| {
                    Error::Hex(format!("expected 16 bytes, got {}", b.len()))
                })?;
                Ok($name(arr))
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(s: String) -> Result<Self> {
                Self::from_hex(&s)
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.to_hex()
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::from_hex(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = u8;

            fn index(&self, i: usize) -> &u8 {
                &self.0[i]
            }
        }
    };
}

bytes16!(Block128);
bytes16!(Key128);

/// One of the four AES round operations, labelled `OP-1`..`OP-4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    AddRoundKey,
    SubBytes,
    ShiftRows,
    MixColumns,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [
        OpKind::AddRoundKey,
        OpKind::SubBytes,
        OpKind::ShiftRows,
        OpKind::MixColumns,
    ];

    pub fn index(self) -> usize {
        match self {
            OpKind::AddRoundKey => 0,
            OpKind::SubBytes => 1,
            OpKind::ShiftRows => 2,
            OpKind::MixColumns => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        OpKind::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            OpKind::AddRoundKey => "OP-1",
            OpKind::SubBytes => "OP-2",
            OpKind::ShiftRows => "OP-3",
            OpKind::MixColumns => "OP-4",
        }
    }

    pub fn from_label(s: &str) -> Option<OpKind> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Operations executed in one round, in order. Round 0 is the initial key
/// whitening and the final round has no MixColumns.
pub fn round_ops(round: usize) -> &'static [OpKind] {
    use OpKind::*;
    match round {
        0 => &[AddRoundKey],
        ROUNDS => &[SubBytes, ShiftRows, AddRoundKey],
        _ => &[SubBytes, ShiftRows, MixColumns, AddRoundKey],
    }
}

/// Every `(round, op)` pair of a full encryption, in execution order.
pub fn op_sequence() -> impl Iterator<Item = (usize, OpKind)> {
    (0..=ROUNDS).flat_map(|r| round_ops(r).iter().map(move |&op| (r, op)))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RoundKeys(pub [Block128; ROUNDS + 1]);

impl RoundKeys {
    pub fn get(&self, round: usize) -> &Block128 {
        &self.0[round]
    }
}

pub fn key_expansion(key: &Key128) -> RoundKeys {
    let mut w = [[0u8; 4]; 4 * (ROUNDS + 1)];
    for (i, word) in w.iter_mut().take(4).enumerate() {
        word.copy_from_slice(&key.0[4 * i..4 * i + 4]);
    }
    for i in 4..w.len() {
        let mut t = w[i - 1];
        if i % 4 == 0 {
            t.rotate_left(1);
            for b in t.iter_mut() {
                *b = sbox_lookup(*b);
            }
            t[0] ^= RCON[i / 4 - 1];
        }
        for j in 0..4 {
            w[i][j] = w[i - 4][j] ^ t[j];
        }
    }
    let mut keys = [Block128::default(); ROUNDS + 1];
    for (r, k) in keys.iter_mut().enumerate() {
        for c in 0..4 {
            k.0[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
        }
    }
    RoundKeys(keys)
}

fn add_round_key(s: &mut [u8; 16], k: &Block128) {
    for (b, k) in s.iter_mut().zip(k.0.iter()) {
        *b ^= k;
    }
}

fn sub_bytes(s: &mut [u8; 16]) {
    for b in s.iter_mut() {
        *b = sbox_lookup(*b);
    }
}

fn shift_rows(s: &mut [u8; 16]) {
    let old = *s;
    for c in 0..4 {
        for r in 0..4 {
            s[4 * c + r] = old[4 * ((c + r) % 4) + r];
        }
    }
}

#[inline]
fn xtime(b: u8) -> u8 {
    (b << 1) ^ if b & 0x80 != 0 { 0x1b } else { 0 }
}

fn mix_columns(s: &mut [u8; 16]) {
    for col in s.chunks_exact_mut(4) {
        let [a0, a1, a2, a3] = [col[0], col[1], col[2], col[3]];
        let all = a0 ^ a1 ^ a2 ^ a3;
        col[0] = a0 ^ all ^ xtime(a0 ^ a1);
        col[1] = a1 ^ all ^ xtime(a1 ^ a2);
        col[2] = a2 ^ all ^ xtime(a2 ^ a3);
        col[3] = a3 ^ all ^ xtime(a3 ^ a0);
    }
}

fn apply(op: OpKind, s: &mut [u8; 16], rk: &Block128) {
    match op {
        OpKind::AddRoundKey => add_round_key(s, rk),
        OpKind::SubBytes => sub_bytes(s),
        OpKind::ShiftRows => shift_rows(s),
        OpKind::MixColumns => mix_columns(s),
    }
}

/// State after one operation of one round.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct OpRecord {
    pub round: usize,
    pub op: OpKind,
    pub input: Block128,
    pub output: Block128,
}

/// Every intermediate state of one encryption, in execution order.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct IntermediateTrace {
    pub records: Vec<OpRecord>,
}

impl IntermediateTrace {
    pub fn find(&self, round: usize, op: OpKind) -> Option<&OpRecord> {
        self.records
            .iter()
            .find(|r| r.round == round && r.op == op)
    }

    /// First-round SubBytes output, i.e. the attack point for all 16 bytes.
    pub fn attack_point(&self) -> Block128 {
        self.find(1, OpKind::SubBytes)
            .map(|r| r.output)
            .expect("recorded encryption always has a round-1 SubBytes")
    }
}

/// Runs the rest of the cipher starting from `state`, which must be the
/// output of `op` in `round`.
pub fn complete_from(state: Block128, round: usize, op: OpKind, keys: &RoundKeys) -> Block128 {
    let mut s = state.0;
    let mut started = false;
    for (r, o) in op_sequence() {
        if started {
            apply(o, &mut s, keys.get(r));
        } else if r == round && o == op {
            started = true;
        }
    }
    Block128(s)
}

pub fn encrypt_with_keys(
    pt: &Block128,
    keys: &RoundKeys,
    record: bool,
) -> (Block128, Option<IntermediateTrace>) {
    let mut s = pt.0;
    let mut trace = record.then(|| IntermediateTrace {
        records: Vec::with_capacity(4 * ROUNDS),
    });
    for (round, op) in op_sequence() {
        let input = s;
        apply(op, &mut s, keys.get(round));
        if let Some(t) = trace.as_mut() {
            t.records.push(OpRecord {
                round,
                op,
                input: Block128(input),
                output: Block128(s),
            });
        }
    }
    (Block128(s), trace)
}

pub fn encrypt_block(
    pt: &Block128,
    key: &Key128,
    record: bool,
) -> (Block128, Option<IntermediateTrace>) {
    encrypt_with_keys(pt, &key_expansion(key), record)
}
