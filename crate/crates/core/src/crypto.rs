//! Keys, signatures, hashing and the sealed envelope used on the IoT link.
//!
//! Signatures are ECDSA over secp256k1 with RFC 6979 nonces, so the same
//! `(digest, secret)` pair always produces the same 64-byte compact signature.
//! Signatures are low-S normalized.

use std::fmt;
use std::str::FromStr;

use aes::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use k256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use k256::ecdsa::{SigningKey, VerifyingKey};
use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::sec1::ToEncodedPoint;
use k256::{FieldBytes, ProjectivePoint, Scalar, U256};
use ripemd::Ripemd160;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;
type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

pub const PUBKEY_LEN: usize = 33;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key seed must be nonzero")]
    ZeroSeed,
    #[error("key seed is not a valid secp256k1 scalar")]
    InvalidSeed,
    #[error("malformed public key")]
    InvalidPublicKey,
    #[error("derived key is the point at infinity")]
    DegenerateKey,
}

macro_rules! hex_newtype_serde {
    ($name:ident, $len:expr) => {
        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let bytes = hex::decode(s).map_err(|e| e.to_string())?;
                let arr: [u8; $len] = bytes
                    .try_into()
                    .map_err(|_| format!("expected {} bytes", $len))?;
                Ok($name(arr))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }
    };
}

/// 32-byte hash output. Txids, sighashes and payment hashes all use this type.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

hex_newtype_serde!(Digest, 32);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn sha256(data: &[u8]) -> Digest {
        Digest(Sha256::digest(data).into())
    }

    /// Double SHA-256, used for txids and signature hashes.
    pub fn sha256d(data: &[u8]) -> Digest {
        Digest(Sha256::digest(Sha256::digest(data)).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// RIPEMD160(SHA256(data)).
pub fn hash160(data: &[u8]) -> [u8; 20] {
    Ripemd160::digest(Sha256::digest(data)).into()
}

pub fn ripemd160(data: &[u8]) -> [u8; 20] {
    Ripemd160::digest(data).into()
}

/// Compressed SEC1 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBKEY_LEN]);

hex_newtype_serde!(PublicKey, PUBKEY_LEN);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn to_point(self) -> Result<ProjectivePoint, CryptoError> {
        let pk = k256::PublicKey::from_sec1_bytes(&self.0)
            .map_err(|_| CryptoError::InvalidPublicKey)?;
        Ok(pk.to_projective())
    }

    fn from_point(point: ProjectivePoint) -> Result<PublicKey, CryptoError> {
        let pk = k256::PublicKey::from_affine(point.to_affine())
            .map_err(|_| CryptoError::DegenerateKey)?;
        Ok(Self::from_k256(&pk))
    }

    fn from_k256(pk: &k256::PublicKey) -> PublicKey {
        let encoded = pk.to_encoded_point(true);
        let mut out = [0u8; PUBKEY_LEN];
        out.copy_from_slice(encoded.as_bytes());
        PublicKey(out)
    }
}

/// A secret scalar. Deliberately not `Serialize`.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Result<SecretKey, CryptoError> {
        if bytes == [0; 32] {
            return Err(CryptoError::ZeroSeed);
        }
        k256::SecretKey::from_slice(&bytes).map_err(|_| CryptoError::InvalidSeed)?;
        Ok(SecretKey(bytes))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0
    }

    pub fn public_key(&self) -> PublicKey {
        let sk = k256::SecretKey::from_slice(&self.0).expect("validated at construction");
        PublicKey::from_k256(&sk.public_key())
    }

    fn scalar(&self) -> Scalar {
        *k256::SecretKey::from_slice(&self.0)
            .expect("validated at construction")
            .to_nonzero_scalar()
    }

    fn from_scalar(s: Scalar) -> Result<SecretKey, CryptoError> {
        SecretKey::from_bytes(s.to_bytes().into()).map_err(|_| CryptoError::DegenerateKey)
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        let sk = SigningKey::from_slice(&self.0).expect("validated at construction");
        let sig: k256::ecdsa::Signature = sk
            .sign_prehash(&digest.0)
            .expect("32-byte prehash is always accepted");
        let sig = sig.normalize_s().unwrap_or(sig);
        let mut out = [0u8; SIGNATURE_LEN];
        out.copy_from_slice(&sig.to_bytes());
        Signature(out)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

impl KeyPair {
    pub fn from_secret(secret: SecretKey) -> KeyPair {
        let public = secret.public_key();
        KeyPair { secret, public }
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        self.secret.sign(digest)
    }
}

/// Deterministic key generation. The seed is used directly as the secret scalar.
pub fn keygen(seed: &[u8; 32]) -> Result<KeyPair, CryptoError> {
    Ok(KeyPair::from_secret(SecretKey::from_bytes(*seed)?))
}

/// Derives a keypair from arbitrary material by hashing with a label. Retries
/// with a counter in the (astronomically unlikely) case the hash is not a
/// valid scalar.
pub fn derive_keypair(material: &[u8], label: &str) -> KeyPair {
    for counter in 0u32.. {
        let mut h = Sha256::new();
        h.update(material);
        h.update(label.as_bytes());
        h.update(counter.to_be_bytes());
        let seed: [u8; 32] = h.finalize().into();
        if let Ok(kp) = keygen(&seed) {
            return kp;
        }
    }
    unreachable!()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

hex_newtype_serde!(Signature, SIGNATURE_LEN);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn sign(digest: &Digest, secret: &SecretKey) -> Signature {
    secret.sign(digest)
}

/// Malformed signature or key bytes yield `false`.
pub fn verify(sig: &[u8], pubkey: &[u8], digest: &Digest) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(pubkey) else {
        return false;
    };
    let Ok(sig) = k256::ecdsa::Signature::from_slice(sig) else {
        return false;
    };
    vk.verify_prehash(&digest.0, &sig).is_ok()
}

fn tweak(a: &PublicKey, b: &PublicKey) -> Scalar {
    let mut h = Sha256::new();
    h.update(a.0);
    h.update(b.0);
    let bytes: FieldBytes = h.finalize();
    <Scalar as Reduce<U256>>::reduce_bytes(&bytes)
}

/// Revocation public key for one commitment:
/// `basepoint * H(basepoint || point) + point * H(point || basepoint)`.
///
/// `basepoint` belongs to the party that will punish, `point` is the
/// per-commitment point of the party that owns the commitment.
pub fn revocation_pubkey(
    basepoint: &PublicKey,
    per_commitment_point: &PublicKey,
) -> Result<PublicKey, CryptoError> {
    let b = basepoint.to_point()?;
    let p = per_commitment_point.to_point()?;
    let sum = b * tweak(basepoint, per_commitment_point) + p * tweak(per_commitment_point, basepoint);
    PublicKey::from_point(sum)
}

/// Secret matching [`revocation_pubkey`]; computable only once the owner has
/// revealed its per-commitment secret.
pub fn revocation_secret(
    basepoint_secret: &SecretKey,
    per_commitment_secret: &SecretKey,
) -> Result<SecretKey, CryptoError> {
    let basepoint = basepoint_secret.public_key();
    let point = per_commitment_secret.public_key();
    let s = basepoint_secret.scalar() * tweak(&basepoint, &point)
        + per_commitment_secret.scalar() * tweak(&point, &basepoint);
    SecretKey::from_scalar(s)
}

pub const MAC_LEN: usize = 32;
pub const IV_LEN: usize = 16;
const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("envelope authentication failed")]
    BadMac,
    #[error("envelope truncated or length field inconsistent")]
    BadLength,
}

/// Pre-shared symmetric keys for one IoT device.
#[derive(Clone, PartialEq, Eq)]
pub struct EnvelopeKeys {
    pub enc_key: [u8; 32],
    pub mac_key: [u8; 32],
}

impl fmt::Debug for EnvelopeKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EnvelopeKeys(..)")
    }
}

impl EnvelopeKeys {
    pub fn derive(material: &[u8]) -> EnvelopeKeys {
        let mut enc = Sha256::new();
        enc.update(material);
        enc.update(b"envelope/enc");
        let mut mac = Sha256::new();
        mac.update(material);
        mac.update(b"envelope/mac");
        EnvelopeKeys {
            enc_key: enc.finalize().into(),
            mac_key: mac.finalize().into(),
        }
    }
}

/// Wire layout: `len (u32 BE) || msg_type || ciphertext || mac`, where `len`
/// counts the ciphertext field. The ciphertext field is a 16-byte synthetic
/// IV followed by the AES-256-CTR body, which has exactly the plaintext
/// length. The MAC is HMAC-SHA256 over `msg_type || ciphertext`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SecureEnvelope {
    pub msg_type: u8,
    pub ciphertext: Vec<u8>,
    pub mac: [u8; MAC_LEN],
}

impl SecureEnvelope {
    /// Length of the encrypted body, excluding the IV.
    pub fn encrypted_len(&self) -> usize {
        self.ciphertext.len().saturating_sub(IV_LEN)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + MAC_LEN);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.push(self.msg_type);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.mac);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SecureEnvelope, EnvelopeError> {
        if bytes.len() < HEADER_LEN + MAC_LEN {
            return Err(EnvelopeError::BadLength);
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if len < IV_LEN || bytes.len() != HEADER_LEN + len + MAC_LEN {
            return Err(EnvelopeError::BadLength);
        }
        let ciphertext = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
        let mut mac = [0u8; MAC_LEN];
        mac.copy_from_slice(&bytes[HEADER_LEN + len..]);
        Ok(SecureEnvelope {
            msg_type: bytes[4],
            ciphertext,
            mac,
        })
    }
}

fn hmac(key: &[u8; 32]) -> HmacSha256 {
    <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length")
}

fn synthetic_iv(keys: &EnvelopeKeys, msg_type: u8, plaintext: &[u8]) -> [u8; IV_LEN] {
    let mut m = hmac(&keys.enc_key);
    m.update(&[msg_type]);
    m.update(plaintext);
    let tag = m.finalize().into_bytes();
    let mut iv = [0u8; IV_LEN];
    iv.copy_from_slice(&tag[..IV_LEN]);
    iv
}

/// Encrypt-then-MAC. Deterministic: identical plaintexts seal identically.
pub fn seal(msg_type: u8, plaintext: &[u8], keys: &EnvelopeKeys) -> SecureEnvelope {
    let iv = synthetic_iv(keys, msg_type, plaintext);
    let mut body = plaintext.to_vec();
    Aes256Ctr::new(&keys.enc_key.into(), &iv.into()).apply_keystream(&mut body);

    let mut ciphertext = Vec::with_capacity(IV_LEN + body.len());
    ciphertext.extend_from_slice(&iv);
    ciphertext.extend_from_slice(&body);

    let mut m = hmac(&keys.mac_key);
    m.update(&[msg_type]);
    m.update(&ciphertext);
    SecureEnvelope {
        msg_type,
        ciphertext,
        mac: m.finalize().into_bytes().into(),
    }
}

/// Verifies the MAC before decrypting.
pub fn open(env: &SecureEnvelope, keys: &EnvelopeKeys) -> Result<Vec<u8>, EnvelopeError> {
    if env.ciphertext.len() < IV_LEN {
        return Err(EnvelopeError::BadLength);
    }
    let mut m = hmac(&keys.mac_key);
    m.update(&[env.msg_type]);
    m.update(&env.ciphertext);
    m.verify_slice(&env.mac).map_err(|_| EnvelopeError::BadMac)?;

    let (iv, body) = env.ciphertext.split_at(IV_LEN);
    let iv: [u8; IV_LEN] = iv.try_into().unwrap();
    let mut plaintext = body.to_vec();
    Aes256Ctr::new(&keys.enc_key.into(), &iv.into()).apply_keystream(&mut plaintext);
    if synthetic_iv(keys, env.msg_type, &plaintext) != iv {
        return Err(EnvelopeError::BadMac);
    }
    Ok(plaintext)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(b: u8) -> [u8; 32] {
        let mut s = [0u8; 32];
        s[31] = b;
        s[0] = 0x11;
        s
    }

    #[test]
    fn keygen_is_deterministic_and_injective() {
        let a = keygen(&seed(1)).unwrap();
        assert_eq!(a, keygen(&seed(1)).unwrap());
        assert_ne!(a.public, keygen(&seed(2)).unwrap().public);
    }

    #[test]
    fn zero_seed_rejected() {
        assert_eq!(keygen(&[0; 32]), Err(CryptoError::ZeroSeed));
        // n itself is out of range
        let n = hex::decode("fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141")
            .unwrap();
        assert_eq!(keygen(&n.try_into().unwrap()), Err(CryptoError::InvalidSeed));
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = keygen(&seed(7)).unwrap();
        let d = Digest::sha256(b"commitment");
        let sig = kp.sign(&d);
        assert!(verify(sig.as_bytes(), kp.public.as_bytes(), &d));
        assert!(!verify(sig.as_bytes(), kp.public.as_bytes(), &Digest::sha256(b"other")));
        assert_eq!(sig, kp.sign(&d));
    }

    #[test]
    fn malformed_inputs_verify_false() {
        let kp = keygen(&seed(7)).unwrap();
        let d = Digest::sha256(b"x");
        let sig = kp.sign(&d);
        assert!(!verify(&sig.0[..63], kp.public.as_bytes(), &d));
        assert!(!verify(&[], kp.public.as_bytes(), &d));
        assert!(!verify(sig.as_bytes(), &[0x02; 33], &d));
        assert!(!verify(sig.as_bytes(), &[], &d));
    }

    #[test]
    fn revocation_key_pair_matches() {
        let base = keygen(&seed(3)).unwrap();
        let per_commitment = keygen(&seed(4)).unwrap();
        let pk = revocation_pubkey(&base.public, &per_commitment.public).unwrap();
        let sk = revocation_secret(&base.secret, &per_commitment.secret).unwrap();
        assert_eq!(sk.public_key(), pk);
        let d = Digest::sha256(b"justice");
        assert!(verify(sk.sign(&d).as_bytes(), pk.as_bytes(), &d));
        // neither half alone is the revocation key
        assert_ne!(pk, base.public);
        assert_ne!(pk, per_commitment.public);
    }

    #[test]
    fn hash160_of_empty_matches_reference() {
        // RIPEMD160(SHA256("")), a widely published constant.
        assert_eq!(hex::encode(hash160(b"")), "b472a266d0bd89c13706a4132ccfb16f7c3b9fcb");
    }

    #[test]
    fn envelope_round_trip_and_tamper() {
        let keys = EnvelopeKeys::derive(b"device-1");
        let env = seal(0x04, b"pay 1000 sat to node", &keys);
        assert_eq!(open(&env, &keys).unwrap(), b"pay 1000 sat to node");

        let mut bad = env.clone();
        bad.ciphertext[20] ^= 0x01;
        assert_eq!(open(&bad, &keys), Err(EnvelopeError::BadMac));

        let mut bad = env.clone();
        bad.mac[0] ^= 0x80;
        assert_eq!(open(&bad, &keys), Err(EnvelopeError::BadMac));

        let mut bad = env.clone();
        bad.msg_type ^= 1;
        assert_eq!(open(&bad, &keys), Err(EnvelopeError::BadMac));

        let other = EnvelopeKeys::derive(b"device-2");
        assert_eq!(open(&env, &other), Err(EnvelopeError::BadMac));
    }

    #[test]
    fn envelope_wire_layout() {
        let keys = EnvelopeKeys::derive(b"k");
        let plaintext = [0xabu8; 24];
        let env = seal(0x06, &plaintext, &keys);
        // stream mode: the encrypted body is exactly as long as the plaintext
        assert_eq!(env.encrypted_len(), 24);
        let bytes = env.to_bytes();
        assert_eq!(&bytes[..4], &40u32.to_be_bytes());
        assert_eq!(bytes[4], 0x06);
        assert_eq!(bytes.len(), 4 + 1 + 40 + 32);
        assert_eq!(SecureEnvelope::from_bytes(&bytes).unwrap(), env);
    }

    #[test]
    fn envelope_truncation_is_bad_length() {
        let keys = EnvelopeKeys::derive(b"k");
        let bytes = seal(1, b"hello", &keys).to_bytes();
        for cut in [0, 4, 5, 20, bytes.len() - 1] {
            assert_eq!(
                SecureEnvelope::from_bytes(&bytes[..cut]),
                Err(EnvelopeError::BadLength),
                "cut at {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert_eq!(SecureEnvelope::from_bytes(&longer), Err(EnvelopeError::BadLength));
    }
}
