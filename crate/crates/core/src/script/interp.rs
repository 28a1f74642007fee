use thiserror::Error;

use super::{decode_num, encode_num, Opcode, Script, Token, MAX_PUSH_SIZE};
use crate::crypto::{self, Digest};

/// What a single input spend is evaluated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpendContext {
    /// Signature hash of the spending transaction for this input.
    pub sighash: Digest,
    /// Current chain tip height.
    pub current_height: u32,
    /// Confirmations of the output being spent.
    pub input_age: u32,
}

/// Signature verification used by CHECKSIG / CHECKMULTISIG.
pub trait SignatureChecker {
    fn check_sig(&self, sig: &[u8], pubkey: &[u8], digest: &Digest) -> bool;
}

/// The production checker: ECDSA over secp256k1.
#[derive(Clone, Copy, Debug, Default)]
pub struct EcdsaChecker;

impl SignatureChecker for EcdsaChecker {
    fn check_sig(&self, sig: &[u8], pubkey: &[u8], digest: &Digest) -> bool {
        crypto::verify(sig, pubkey, digest)
    }
}

impl<F: Fn(&[u8], &[u8], &Digest) -> bool> SignatureChecker for F {
    fn check_sig(&self, sig: &[u8], pubkey: &[u8], digest: &Digest) -> bool {
        self(sig, pubkey, digest)
    }
}

/// Machine-readable reason a spend failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("stack underflow at {0}")]
    StackUnderflow(&'static str),
    #[error("opcode 0x{0:02x} is not supported")]
    UnsupportedOpcode(u8),
    #[error("unbalanced conditional")]
    UnbalancedConditional,
    #[error("IF/NOTIF argument must be empty or 0x01")]
    MinimalIf,
    #[error("OP_EQUALVERIFY failed")]
    EqualVerify,
    #[error("relative timelock needs {required} confirmations, input has {age}")]
    Csv { required: i64, age: u32 },
    #[error("absolute timelock needs height {required}, tip is {height}")]
    Cltv { required: i64, height: u32 },
    #[error("negative timelock")]
    NegativeLocktime,
    #[error("invalid script number")]
    InvalidNumber,
    #[error("multisig key or signature count out of range")]
    MultisigCount,
    #[error("CHECKMULTISIG dummy element must be empty")]
    NullDummy,
    #[error("push exceeds element size limit")]
    PushSize,
    #[error("final stack must hold exactly one element, found {0}")]
    CleanStack(usize),
    #[error("script evaluated to false")]
    EvalFalse,
}

const MAX_MULTISIG_KEYS: i64 = 20;

fn truthy(v: &[u8]) -> bool {
    for (i, b) in v.iter().enumerate() {
        if *b != 0 {
            // negative zero is false
            return !(i == v.len() - 1 && *b == 0x80);
        }
    }
    false
}

fn bool_item(b: bool) -> Vec<u8> {
    if b {
        vec![1]
    } else {
        Vec::new()
    }
}

struct Machine<'a, C: SignatureChecker + ?Sized> {
    stack: Vec<Vec<u8>>,
    ctx: &'a SpendContext,
    checker: &'a C,
}

impl<C: SignatureChecker + ?Sized> Machine<'_, C> {
    fn pop(&mut self, at: &'static str) -> Result<Vec<u8>, EvalError> {
        self.stack.pop().ok_or(EvalError::StackUnderflow(at))
    }

    fn top(&self, at: &'static str) -> Result<&Vec<u8>, EvalError> {
        self.stack.last().ok_or(EvalError::StackUnderflow(at))
    }

    fn pop_num(&mut self, at: &'static str) -> Result<i64, EvalError> {
        let v = self.pop(at)?;
        decode_num(&v, 4).map_err(|_| EvalError::InvalidNumber)
    }

    fn step(&mut self, op: Opcode) -> Result<(), EvalError> {
        match op {
            Opcode::Num(n) => self.stack.push(encode_num(n as i64)),
            Opcode::Drop => {
                self.pop("OP_DROP")?;
            }
            Opcode::Dup => {
                let v = self.top("OP_DUP")?.clone();
                self.stack.push(v);
            }
            Opcode::Swap => {
                let n = self.stack.len();
                if n < 2 {
                    return Err(EvalError::StackUnderflow("OP_SWAP"));
                }
                self.stack.swap(n - 1, n - 2);
            }
            Opcode::Size => {
                let len = self.top("OP_SIZE")?.len();
                self.stack.push(encode_num(len as i64));
            }
            Opcode::Equal | Opcode::EqualVerify => {
                let a = self.pop("OP_EQUAL")?;
                let b = self.pop("OP_EQUAL")?;
                if op == Opcode::Equal {
                    self.stack.push(bool_item(a == b));
                } else if a != b {
                    return Err(EvalError::EqualVerify);
                }
            }
            Opcode::Sha256 => {
                let v = self.pop("OP_SHA256")?;
                self.stack.push(crypto::sha256(&v).to_vec());
            }
            Opcode::Hash160 => {
                let v = self.pop("OP_HASH160")?;
                self.stack.push(crypto::hash160(&v).to_vec());
            }
            Opcode::CheckSig => {
                let pubkey = self.pop("OP_CHECKSIG")?;
                let sig = self.pop("OP_CHECKSIG")?;
                let ok = !sig.is_empty() && self.checker.check_sig(&sig, &pubkey, &self.ctx.sighash);
                self.stack.push(bool_item(ok));
            }
            Opcode::CheckMultiSig => self.check_multisig()?,
            Opcode::CheckSequenceVerify => {
                let n = decode_num(self.top("OP_CSV")?, 5).map_err(|_| EvalError::InvalidNumber)?;
                if n < 0 {
                    return Err(EvalError::NegativeLocktime);
                }
                if (self.ctx.input_age as i64) < n {
                    return Err(EvalError::Csv {
                        required: n,
                        age: self.ctx.input_age,
                    });
                }
            }
            Opcode::CheckLockTimeVerify => {
                let n = decode_num(self.top("OP_CLTV")?, 5).map_err(|_| EvalError::InvalidNumber)?;
                if n < 0 {
                    return Err(EvalError::NegativeLocktime);
                }
                if (self.ctx.current_height as i64) < n {
                    return Err(EvalError::Cltv {
                        required: n,
                        height: self.ctx.current_height,
                    });
                }
            }
            Opcode::Unsupported(b) => return Err(EvalError::UnsupportedOpcode(b)),
            Opcode::If | Opcode::NotIf | Opcode::Else | Opcode::EndIf => {
                unreachable!("conditionals handled by the caller")
            }
        }
        Ok(())
    }

    fn check_multisig(&mut self) -> Result<(), EvalError> {
        let n_keys = self.pop_num("OP_CHECKMULTISIG")?;
        if !(0..=MAX_MULTISIG_KEYS).contains(&n_keys) {
            return Err(EvalError::MultisigCount);
        }
        let mut keys = Vec::with_capacity(n_keys as usize);
        for _ in 0..n_keys {
            keys.push(self.pop("OP_CHECKMULTISIG")?);
        }
        keys.reverse();
        let n_sigs = self.pop_num("OP_CHECKMULTISIG")?;
        if !(0..=n_keys).contains(&n_sigs) {
            return Err(EvalError::MultisigCount);
        }
        let mut sigs = Vec::with_capacity(n_sigs as usize);
        for _ in 0..n_sigs {
            sigs.push(self.pop("OP_CHECKMULTISIG")?);
        }
        sigs.reverse();
        let dummy = self.pop("OP_CHECKMULTISIG")?;
        if !dummy.is_empty() {
            return Err(EvalError::NullDummy);
        }

        // Signatures must appear in the same order as their keys.
        let mut ok = true;
        let (mut isig, mut ikey) = (0usize, 0usize);
        while ok && isig < sigs.len() {
            let sig = &sigs[isig];
            if !sig.is_empty() && self.checker.check_sig(sig, &keys[ikey], &self.ctx.sighash) {
                isig += 1;
            }
            ikey += 1;
            if sigs.len() - isig > keys.len() - ikey {
                ok = false;
            }
        }
        self.stack.push(bool_item(ok));
        Ok(())
    }
}

/// Evaluates `witness` (bottom to top) against `script`.
///
/// Segwit-v0 rules that matter for the channel templates are enforced:
/// minimal IF arguments, empty CHECKMULTISIG dummy and a clean final stack.
pub fn eval_spend<C: SignatureChecker + ?Sized>(
    script: &Script,
    witness: &[Vec<u8>],
    ctx: &SpendContext,
    checker: &C,
) -> Result<(), EvalError> {
    if witness.iter().any(|w| w.len() > MAX_PUSH_SIZE) {
        return Err(EvalError::PushSize);
    }
    let mut m = Machine {
        stack: witness.to_vec(),
        ctx,
        checker,
    };
    // One entry per open IF: whether that branch is executing.
    let mut exec: Vec<bool> = Vec::new();

    for token in script.tokens() {
        let executing = exec.iter().all(|b| *b);
        match token {
            Token::Push(data) => {
                if data.len() > MAX_PUSH_SIZE {
                    return Err(EvalError::PushSize);
                }
                if executing {
                    m.stack.push(data.clone());
                }
            }
            Token::Op(op @ (Opcode::If | Opcode::NotIf)) => {
                let mut take = false;
                if executing {
                    let v = m.pop("OP_IF")?;
                    if !(v.is_empty() || v == [1]) {
                        return Err(EvalError::MinimalIf);
                    }
                    take = truthy(&v);
                    if *op == Opcode::NotIf {
                        take = !take;
                    }
                }
                exec.push(take);
            }
            Token::Op(Opcode::Else) => {
                let last = exec.last_mut().ok_or(EvalError::UnbalancedConditional)?;
                *last = !*last;
            }
            Token::Op(Opcode::EndIf) => {
                exec.pop().ok_or(EvalError::UnbalancedConditional)?;
            }
            Token::Op(op) => {
                if let Opcode::Unsupported(b) = op {
                    // rejected even inside an unexecuted branch
                    return Err(EvalError::UnsupportedOpcode(*b));
                }
                if executing {
                    m.step(*op)?;
                }
            }
        }
    }
    if !exec.is_empty() {
        return Err(EvalError::UnbalancedConditional);
    }
    match m.stack.len() {
        1 if truthy(&m.stack[0]) => Ok(()),
        1 => Err(EvalError::EvalFalse),
        n => Err(EvalError::CleanStack(n)),
    }
}
