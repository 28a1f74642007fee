//! Witness scripts: a token representation, canonical byte serialization, a
//! small interpreter and the channel's script templates.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

mod interp;
pub mod oracle;
pub mod templates;

pub use interp::{eval_spend, EcdsaChecker, EvalError, SignatureChecker, SpendContext};
pub use templates::*;

/// Largest single push the interpreter accepts.
pub const MAX_PUSH_SIZE: usize = 520;

/// Opcode byte values from the Bitcoin opcode table.
pub mod op {
    pub const OP_0: u8 = 0x00;
    pub const OP_PUSHDATA1: u8 = 0x4c;
    pub const OP_PUSHDATA2: u8 = 0x4d;
    pub const OP_1: u8 = 0x51;
    pub const OP_16: u8 = 0x60;
    pub const OP_IF: u8 = 0x63;
    pub const OP_NOTIF: u8 = 0x64;
    pub const OP_ELSE: u8 = 0x67;
    pub const OP_ENDIF: u8 = 0x68;
    pub const OP_DROP: u8 = 0x75;
    pub const OP_DUP: u8 = 0x76;
    pub const OP_SWAP: u8 = 0x7c;
    pub const OP_SIZE: u8 = 0x82;
    pub const OP_EQUAL: u8 = 0x87;
    pub const OP_EQUALVERIFY: u8 = 0x88;
    pub const OP_SHA256: u8 = 0xa8;
    pub const OP_HASH160: u8 = 0xa9;
    pub const OP_CHECKSIG: u8 = 0xac;
    pub const OP_CHECKMULTISIG: u8 = 0xae;
    pub const OP_CHECKLOCKTIMEVERIFY: u8 = 0xb1;
    pub const OP_CHECKSEQUENCEVERIFY: u8 = 0xb2;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    /// OP_1 ..= OP_16
    Num(u8),
    If,
    NotIf,
    Else,
    EndIf,
    Drop,
    Dup,
    Swap,
    Size,
    Equal,
    EqualVerify,
    Sha256,
    Hash160,
    CheckSig,
    CheckMultiSig,
    CheckLockTimeVerify,
    CheckSequenceVerify,
    /// Anything outside the whitelist. Parses, but never evaluates.
    Unsupported(u8),
}

impl Opcode {
    pub fn to_byte(self) -> u8 {
        use op::*;
        match self {
            Opcode::Num(n) => OP_1 + n - 1,
            Opcode::If => OP_IF,
            Opcode::NotIf => OP_NOTIF,
            Opcode::Else => OP_ELSE,
            Opcode::EndIf => OP_ENDIF,
            Opcode::Drop => OP_DROP,
            Opcode::Dup => OP_DUP,
            Opcode::Swap => OP_SWAP,
            Opcode::Size => OP_SIZE,
            Opcode::Equal => OP_EQUAL,
            Opcode::EqualVerify => OP_EQUALVERIFY,
            Opcode::Sha256 => OP_SHA256,
            Opcode::Hash160 => OP_HASH160,
            Opcode::CheckSig => OP_CHECKSIG,
            Opcode::CheckMultiSig => OP_CHECKMULTISIG,
            Opcode::CheckLockTimeVerify => OP_CHECKLOCKTIMEVERIFY,
            Opcode::CheckSequenceVerify => OP_CHECKSEQUENCEVERIFY,
            Opcode::Unsupported(b) => b,
        }
    }

    /// Decodes a non-push opcode byte.
    pub fn from_byte(b: u8) -> Opcode {
        use op::*;
        match b {
            OP_1..=OP_16 => Opcode::Num(b - OP_1 + 1),
            OP_IF => Opcode::If,
            OP_NOTIF => Opcode::NotIf,
            OP_ELSE => Opcode::Else,
            OP_ENDIF => Opcode::EndIf,
            OP_DROP => Opcode::Drop,
            OP_DUP => Opcode::Dup,
            OP_SWAP => Opcode::Swap,
            OP_SIZE => Opcode::Size,
            OP_EQUAL => Opcode::Equal,
            OP_EQUALVERIFY => Opcode::EqualVerify,
            OP_SHA256 => Opcode::Sha256,
            OP_HASH160 => Opcode::Hash160,
            OP_CHECKSIG => Opcode::CheckSig,
            OP_CHECKMULTISIG => Opcode::CheckMultiSig,
            OP_CHECKLOCKTIMEVERIFY => Opcode::CheckLockTimeVerify,
            OP_CHECKSEQUENCEVERIFY => Opcode::CheckSequenceVerify,
            other => Opcode::Unsupported(other),
        }
    }

    pub fn name(self) -> String {
        match self {
            Opcode::Num(n) => n.to_string(),
            Opcode::If => "OP_IF".into(),
            Opcode::NotIf => "OP_NOTIF".into(),
            Opcode::Else => "OP_ELSE".into(),
            Opcode::EndIf => "OP_ENDIF".into(),
            Opcode::Drop => "OP_DROP".into(),
            Opcode::Dup => "OP_DUP".into(),
            Opcode::Swap => "OP_SWAP".into(),
            Opcode::Size => "OP_SIZE".into(),
            Opcode::Equal => "OP_EQUAL".into(),
            Opcode::EqualVerify => "OP_EQUALVERIFY".into(),
            Opcode::Sha256 => "OP_SHA256".into(),
            Opcode::Hash160 => "OP_HASH160".into(),
            Opcode::CheckSig => "OP_CHECKSIG".into(),
            Opcode::CheckMultiSig => "OP_CHECKMULTISIG".into(),
            Opcode::CheckLockTimeVerify => "OP_CHECKLOCKTIMEVERIFY".into(),
            Opcode::CheckSequenceVerify => "OP_CHECKSEQUENCEVERIFY".into(),
            Opcode::Unsupported(b) => format!("OP_UNKNOWN_{b:02x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Op(Opcode),
    Push(Vec<u8>),
}

impl Token {
    /// Minimal numeric push: 0 is the empty push, 1..=16 use OP_N.
    pub fn num(n: i64) -> Token {
        match n {
            0 => Token::Push(Vec::new()),
            1..=16 => Token::Op(Opcode::Num(n as u8)),
            _ => Token::Push(encode_num(n)),
        }
    }

    pub fn push(data: impl AsRef<[u8]>) -> Token {
        Token::Push(data.as_ref().to_vec())
    }
}

impl From<Opcode> for Token {
    fn from(op: Opcode) -> Token {
        Token::Op(op)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script bytes truncated inside a push")]
    Truncated,
    #[error("push of {0} bytes exceeds the element limit")]
    PushTooLarge(usize),
    #[error("duplicate public key in multisig")]
    DuplicateKey,
    #[error("missing parameter `{0}` for this output kind")]
    MissingParam(&'static str),
    #[error("{0} outputs are not supported on the {1} commitment")]
    UnsupportedSide(&'static str, &'static str),
    #[error("missing payment preimage")]
    MissingPreimage,
}

/// Ordered token list. Equality is token equality, which coincides with
/// byte equality of the canonical serialization.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Script {
    tokens: Vec<Token>,
}

impl Script {
    pub fn new(tokens: Vec<Token>) -> Script {
        Script { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.tokens {
            match t {
                Token::Op(op) => out.push(op.to_byte()),
                Token::Push(data) => write_push(&mut out, data),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Script, ScriptError> {
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            i += 1;
            let len = match b {
                op::OP_0 => Some(0),
                0x01..=0x4b => Some(b as usize),
                op::OP_PUSHDATA1 => {
                    let n = *bytes.get(i).ok_or(ScriptError::Truncated)? as usize;
                    i += 1;
                    Some(n)
                }
                op::OP_PUSHDATA2 => {
                    let raw = bytes.get(i..i + 2).ok_or(ScriptError::Truncated)?;
                    i += 2;
                    Some(u16::from_le_bytes([raw[0], raw[1]]) as usize)
                }
                _ => None,
            };
            match len {
                Some(n) => {
                    let data = bytes.get(i..i + n).ok_or(ScriptError::Truncated)?;
                    i += n;
                    tokens.push(Token::Push(data.to_vec()));
                }
                None => tokens.push(Token::Op(Opcode::from_byte(b))),
            }
        }
        Ok(Script { tokens })
    }

    /// Human-readable form: numbers in decimal, pushes in hex, opcodes by name.
    pub fn disassemble(&self) -> String {
        let parts: Vec<String> = self
            .tokens
            .iter()
            .map(|t| match t {
                Token::Op(op) => op.name(),
                Token::Push(d) if d.is_empty() => "0".into(),
                Token::Push(d) if d.len() <= 4 => match decode_num(d, 4) {
                    Ok(n) => n.to_string(),
                    Err(_) => format!("<{}>", hex::encode(d)),
                },
                Token::Push(d) => format!("<{}>", hex::encode(d)),
            })
            .collect();
        parts.join(" ")
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Script({})", self.disassemble())
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.disassemble())
    }
}

impl Serialize for Script {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        Script::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

fn write_push(out: &mut Vec<u8>, data: &[u8]) {
    match data.len() {
        0 => out.push(op::OP_0),
        n @ 1..=0x4b => out.push(n as u8),
        n @ 0x4c..=0xff => {
            out.push(op::OP_PUSHDATA1);
            out.push(n as u8);
        }
        n => {
            out.push(op::OP_PUSHDATA2);
            out.extend_from_slice(&(n as u16).to_le_bytes());
        }
    }
    out.extend_from_slice(data);
}

/// Minimal little-endian sign-magnitude encoding.
pub fn encode_num(n: i64) -> Vec<u8> {
    if n == 0 {
        return Vec::new();
    }
    let neg = n < 0;
    let mut abs = n.unsigned_abs();
    let mut out = Vec::new();
    while abs > 0 {
        out.push((abs & 0xff) as u8);
        abs >>= 8;
    }
    if out.last().unwrap() & 0x80 != 0 {
        out.push(if neg { 0x80 } else { 0x00 });
    } else if neg {
        *out.last_mut().unwrap() |= 0x80;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumError {
    TooLong,
    NonMinimal,
}

pub fn decode_num(bytes: &[u8], max_len: usize) -> Result<i64, NumError> {
    if bytes.len() > max_len {
        return Err(NumError::TooLong);
    }
    if let Some(&last) = bytes.last() {
        if last & 0x7f == 0 && (bytes.len() == 1 || bytes[bytes.len() - 2] & 0x80 == 0) {
            return Err(NumError::NonMinimal);
        }
    } else {
        return Ok(0);
    }
    let mut v: i64 = 0;
    for (i, b) in bytes.iter().enumerate() {
        v |= (*b as i64) << (8 * i);
    }
    let sign_bit = 0x80i64 << (8 * (bytes.len() - 1));
    if v & sign_bit != 0 {
        Ok(-(v & !sign_bit))
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbers_encode_minimally() {
        assert_eq!(encode_num(0), Vec::<u8>::new());
        assert_eq!(encode_num(1), vec![1]);
        assert_eq!(encode_num(127), vec![0x7f]);
        assert_eq!(encode_num(128), vec![0x80, 0x00]);
        assert_eq!(encode_num(144), vec![0x90, 0x00]);
        assert_eq!(encode_num(-1), vec![0x81]);
        assert_eq!(encode_num(-128), vec![0x80, 0x80]);
        assert_eq!(encode_num(0x1234), vec![0x34, 0x12]);
    }

    #[test]
    fn non_minimal_numbers_rejected() {
        assert_eq!(decode_num(&[0x00], 4), Err(NumError::NonMinimal));
        assert_eq!(decode_num(&[0x05, 0x00], 4), Err(NumError::NonMinimal));
        assert_eq!(decode_num(&[0x80], 4), Err(NumError::NonMinimal));
        assert_eq!(decode_num(&[1, 2, 3, 4, 5], 4), Err(NumError::TooLong));
        assert_eq!(decode_num(&[1, 2, 3, 4, 5], 5), Ok(0x0504030201));
    }

    #[test]
    fn token_num_uses_small_int_opcodes() {
        assert_eq!(Token::num(3), Token::Op(Opcode::Num(3)));
        assert_eq!(Token::num(0), Token::Push(vec![]));
        assert_eq!(Token::num(17), Token::Push(vec![17]));
    }

    #[test]
    fn large_pushes_use_pushdata() {
        let s = Script::new(vec![Token::push(vec![7u8; 80]), Token::push(vec![8u8; 300])]);
        let b = s.to_bytes();
        assert_eq!(b[0], op::OP_PUSHDATA1);
        assert_eq!(b[1], 80);
        assert_eq!(b[82], op::OP_PUSHDATA2);
        assert_eq!(Script::from_bytes(&b).unwrap(), s);
    }

    #[test]
    fn truncated_push_is_an_error() {
        assert_eq!(Script::from_bytes(&[0x05, 1, 2]), Err(ScriptError::Truncated));
        assert_eq!(Script::from_bytes(&[op::OP_PUSHDATA1]), Err(ScriptError::Truncated));
    }

    proptest! {
        #[test]
        fn num_round_trip(n in -(1i64 << 39)..(1i64 << 39)) {
            prop_assert_eq!(decode_num(&encode_num(n), 5).unwrap(), n);
        }

        #[test]
        fn arbitrary_bytes_reserialize_identically(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            // Every parsable byte string re-serializes to itself when its
            // pushes are minimal; in all cases parse(serialize(parse(b))) is stable.
            if let Ok(s) = Script::from_bytes(&bytes) {
                let again = Script::from_bytes(&s.to_bytes()).unwrap();
                prop_assert_eq!(again, s);
            }
        }
    }
}
