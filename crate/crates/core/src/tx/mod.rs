//! SegWit-style transactions: serialization, txid and per-input signature
//! hashes, plus the channel transaction builders.
//!
//! Outputs carry their witness script directly rather than a script hash;
//! the simulated chain evaluates spends against that script.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;
use crate::script::{Script, ScriptError, Witness};

mod builders;
mod state;

pub use builders::*;
pub use state::*;

/// Sequence value that disables relative-locktime interpretation.
pub const SEQUENCE_FINAL: u32 = 0xffff_ffff;
/// Appended to every signature hash preimage.
pub const SIGHASH_ALL: u32 = 1;
pub const COIN: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("insufficient funds: need {needed} sat, have {available} sat")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("balances sum to {actual} sat but capacity is {expected} sat")]
    ConservationViolated { expected: u64, actual: u64 },
    #[error("{0} transactions are not supported for the {1} commitment")]
    UnsupportedSide(&'static str, &'static str),
    #[error("output {0} is not an HTLC output")]
    NotAnHtlcOutput(u32),
    #[error("payment of {amount} sat does not exceed the {fee} sat service fee")]
    FeeUnderflow { amount: u64, fee: u64 },
    #[error("channel has pending HTLCs")]
    PendingHtlcs,
    #[error("fee payer balance {balance} sat cannot cover fee {fee} sat")]
    InsufficientBalanceForFee { balance: u64, fee: u64 },
    #[error("HTLC of {amount} sat cannot cover the {fee} sat on-chain fee")]
    HtlcBelowFee { amount: u64, fee: u64 },
    #[error("input index {index} out of range ({len} inputs)")]
    InputIndexOutOfRange { index: usize, len: usize },
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("transaction decode failed: {0}")]
    Decode(&'static str),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Digest,
    pub vout: u32,
}

impl OutPoint {
    pub fn new(txid: Digest, vout: u32) -> OutPoint {
        OutPoint { txid, vout }
    }
}

impl fmt::Debug for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxIn {
    pub outpoint: OutPoint,
    pub sequence: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub value: u64,
    pub script: Script,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tx {
    pub version: u32,
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    /// Parallel to `inputs`.
    pub witnesses: Vec<Witness>,
    pub locktime: u32,
}

fn write_varint(out: &mut Vec<u8>, n: u64) {
    match n {
        0..=0xfc => out.push(n as u8),
        0xfd..=0xffff => {
            out.push(0xfd);
            out.extend_from_slice(&(n as u16).to_le_bytes());
        }
        0x1_0000..=0xffff_ffff => {
            out.push(0xfe);
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        _ => {
            out.push(0xff);
            out.extend_from_slice(&n.to_le_bytes());
        }
    }
}

fn write_bytes(out: &mut Vec<u8>, b: &[u8]) {
    write_varint(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn write_outpoint(out: &mut Vec<u8>, op: &OutPoint) {
    out.extend_from_slice(op.txid.as_bytes());
    out.extend_from_slice(&op.vout.to_le_bytes());
}

fn write_output(out: &mut Vec<u8>, o: &TxOut) {
    out.extend_from_slice(&o.value.to_le_bytes());
    write_bytes(out, &o.script.to_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TxError> {
        let end = self.pos.checked_add(n).ok_or(TxError::Decode("length overflow"))?;
        let s = self.bytes.get(self.pos..end).ok_or(TxError::Decode("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TxError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TxError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TxError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64, TxError> {
        Ok(match self.u8()? {
            0xfd => u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as u64,
            0xfe => self.u32()? as u64,
            0xff => self.u64()?,
            n => n as u64,
        })
    }

    fn bytes(&mut self) -> Result<&'a [u8], TxError> {
        let n = self.varint()?;
        if n > self.bytes.len() as u64 {
            return Err(TxError::Decode("length exceeds input"));
        }
        self.take(n as usize)
    }
}

impl Tx {
    fn has_witness(&self) -> bool {
        self.witnesses.iter().any(|w| !w.is_empty())
    }

    fn encode(&self, with_witness: bool) -> Vec<u8> {
        let segwit = with_witness && self.has_witness();
        let mut out = Vec::new();
        out.extend_from_slice(&self.version.to_le_bytes());
        if segwit {
            out.extend_from_slice(&[0x00, 0x01]);
        }
        write_varint(&mut out, self.inputs.len() as u64);
        for i in &self.inputs {
            write_outpoint(&mut out, &i.outpoint);
            write_varint(&mut out, 0); // empty scriptSig
            out.extend_from_slice(&i.sequence.to_le_bytes());
        }
        write_varint(&mut out, self.outputs.len() as u64);
        for o in &self.outputs {
            write_output(&mut out, o);
        }
        if segwit {
            for idx in 0..self.inputs.len() {
                let items = self.witnesses.get(idx).map(|w| w.items()).unwrap_or(&[]);
                write_varint(&mut out, items.len() as u64);
                for item in items {
                    write_bytes(&mut out, item);
                }
            }
        }
        out.extend_from_slice(&self.locktime.to_le_bytes());
        out
    }

    /// Full serialization including witnesses (legacy layout when there are none).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode(true)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    /// Serialization without witness data; this is what the txid commits to.
    pub fn to_bytes_without_witness(&self) -> Vec<u8> {
        self.encode(false)
    }

    pub fn txid(&self) -> Digest {
        Digest::sha256d(&self.to_bytes_without_witness())
    }

    pub fn total_output(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    pub fn outpoint(&self, vout: u32) -> OutPoint {
        OutPoint::new(self.txid(), vout)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tx, TxError> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u32()?;
        let mut segwit = false;
        let mut n_in = r.varint()?;
        if n_in == 0 {
            if r.u8()? != 0x01 {
                return Err(TxError::Decode("bad segwit flag"));
            }
            segwit = true;
            n_in = r.varint()?;
        }
        let mut inputs = Vec::new();
        for _ in 0..n_in {
            let txid = Digest(r.take(32)?.try_into().unwrap());
            let vout = r.u32()?;
            if !r.bytes()?.is_empty() {
                return Err(TxError::Decode("non-empty scriptSig"));
            }
            let sequence = r.u32()?;
            inputs.push(TxIn {
                outpoint: OutPoint { txid, vout },
                sequence,
            });
        }
        let n_out = r.varint()?;
        let mut outputs = Vec::new();
        for _ in 0..n_out {
            let value = r.u64()?;
            let script = Script::from_bytes(r.bytes()?)?;
            outputs.push(TxOut { value, script });
        }
        let mut witnesses = vec![Witness::default(); inputs.len()];
        if segwit {
            for w in witnesses.iter_mut() {
                let n = r.varint()?;
                let mut items = Vec::new();
                for _ in 0..n {
                    items.push(r.bytes()?.to_vec());
                }
                *w = Witness(items);
            }
        }
        let locktime = r.u32()?;
        if r.pos != bytes.len() {
            return Err(TxError::Decode("trailing bytes"));
        }
        Ok(Tx {
            version,
            inputs,
            outputs,
            witnesses,
            locktime,
        })
    }
}

/// Signature hash for one input, committing to the spent script and value
/// (BIP143 layout with SIGHASH_ALL).
pub fn sighash(
    tx: &Tx,
    input_index: usize,
    spent_script: &Script,
    spent_value: u64,
) -> Result<Digest, TxError> {
    let input = tx.inputs.get(input_index).ok_or(TxError::InputIndexOutOfRange {
        index: input_index,
        len: tx.inputs.len(),
    })?;

    let mut prevouts = Vec::new();
    let mut sequences = Vec::new();
    for i in &tx.inputs {
        write_outpoint(&mut prevouts, &i.outpoint);
        sequences.extend_from_slice(&i.sequence.to_le_bytes());
    }
    let mut outputs = Vec::new();
    for o in &tx.outputs {
        write_output(&mut outputs, o);
    }

    let mut pre = Vec::new();
    pre.extend_from_slice(&tx.version.to_le_bytes());
    pre.extend_from_slice(Digest::sha256d(&prevouts).as_bytes());
    pre.extend_from_slice(Digest::sha256d(&sequences).as_bytes());
    write_outpoint(&mut pre, &input.outpoint);
    write_bytes(&mut pre, &spent_script.to_bytes());
    pre.extend_from_slice(&spent_value.to_le_bytes());
    pre.extend_from_slice(&input.sequence.to_le_bytes());
    pre.extend_from_slice(Digest::sha256d(&outputs).as_bytes());
    pre.extend_from_slice(&tx.locktime.to_le_bytes());
    pre.extend_from_slice(&SIGHASH_ALL.to_le_bytes());
    Ok(Digest::sha256d(&pre))
}
