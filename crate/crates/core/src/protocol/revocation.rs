use std::fmt;

use crate::crypto::{sha256, PublicKey, SecretKey};

/// A revealed per-commitment secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommitmentSecret(pub [u8; 32]);

impl fmt::Debug for CommitmentSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CommitmentSecret({})", hex::encode(self.0))
    }
}

impl CommitmentSecret {
    /// The secret as a key, or `None` when the bytes are not a valid scalar.
    pub fn to_key(&self) -> Option<SecretKey> {
        SecretKey::from_bytes(self.0).ok()
    }

    /// True if this secret belongs to `point`.
    pub fn matches(&self, point: &PublicKey) -> bool {
        self.to_key().is_some_and(|k| k.public_key() == *point)
    }
}

/// Per-state commitment secrets derived as `SHA256(seed || i)` with `i` a
/// big-endian u64. Secrets are revealed strictly in order.
///
/// A flat chain means the counterparty stores one secret per revoked state
/// instead of the logarithmic storage a shachain would allow.
#[derive(Clone)]
pub struct RevocationChain {
    seed: [u8; 32],
    next_reveal: u64,
}

impl fmt::Debug for RevocationChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RevocationChain")
            .field("revealed", &self.next_reveal)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("state {requested} revealed out of order, next revealable is {next}")]
pub struct OutOfOrderReveal {
    pub requested: u64,
    pub next: u64,
}

impl RevocationChain {
    pub fn new(seed: [u8; 32]) -> RevocationChain {
        RevocationChain {
            seed,
            next_reveal: 0,
        }
    }

    pub fn secret(&self, i: u64) -> CommitmentSecret {
        let mut buf = [0u8; 40];
        buf[..32].copy_from_slice(&self.seed);
        buf[32..].copy_from_slice(&i.to_be_bytes());
        CommitmentSecret(sha256(&buf))
    }

    pub fn key(&self, i: u64) -> SecretKey {
        self.secret(i)
            .to_key()
            .expect("SHA-256 output is a valid secp256k1 scalar")
    }

    pub fn point(&self, i: u64) -> PublicKey {
        self.key(i).public_key()
    }

    /// Number of secrets revealed so far; states `0..revealed()` are revoked.
    pub fn revealed(&self) -> u64 {
        self.next_reveal
    }

    /// Reveals the secret for state `i`, which must be the next unrevealed one.
    pub fn reveal(&mut self, i: u64) -> Result<CommitmentSecret, OutOfOrderReveal> {
        if i != self.next_reveal {
            return Err(OutOfOrderReveal {
                requested: i,
                next: self.next_reveal,
            });
        }
        self.next_reveal += 1;
        Ok(self.secret(i))
    }
}
