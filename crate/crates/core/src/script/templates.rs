//! Output scripts for the funding, commitment, HTLC and closing transactions,
//! and the witness stacks that spend them.
//!
//! The channel is funded into a 3-of-3 multisig between the IoT device, the
//! gateway and the bridge. Commitment outputs differ from two-party Lightning
//! in three places: a `to_IoT` output with no revocation branch, a gateway
//! `to_local` that only carries collected service fees, and HTLC scripts whose
//! second-stage paths require the IoT device's HTLC signature as well.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Opcode, Script, ScriptError, Token};
use crate::crypto::{hash160, ripemd160, PublicKey, Signature};

/// Witness stack, bottom to top. An empty item is distinct from a missing one.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Witness(pub Vec<Vec<u8>>);

impl Witness {
    pub fn new(items: Vec<Vec<u8>>) -> Witness {
        Witness(items)
    }

    pub fn items(&self) -> &[Vec<u8>] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .0
            .iter()
            .map(|i| if i.is_empty() { "<>".to_string() } else { hex::encode(i) })
            .collect();
        write!(f, "Witness[{}]", items.join(" "))
    }
}

impl Serialize for Witness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<String> = self.0.iter().map(hex::encode).collect();
        items.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Witness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items = Vec::<String>::deserialize(d)?;
        items
            .into_iter()
            .map(|s| hex::decode(s).map_err(serde::de::Error::custom))
            .collect::<Result<Vec<_>, _>>()
            .map(Witness)
    }
}

/// Which party's commitment transaction an output lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Gateway,
    Bridge,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Gateway => "gateway",
            Side::Bridge => "bridge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    ToIot,
    /// Owner's revocable, CSV-delayed output. On the gateway side this holds
    /// only the collected service fees.
    ToLocal,
    ToRemote,
    OfferedHtlc,
    ReceivedHtlc,
}

/// Inputs for [`commitment_output_script`]; each kind reads only the fields
/// it needs and reports the first missing one.
#[derive(Clone, Debug, Default)]
pub struct ScriptParams {
    pub iot_pubkey: Option<PublicKey>,
    pub revocation_pubkey: Option<PublicKey>,
    pub delayed_pubkey: Option<PublicKey>,
    pub remote_pubkey: Option<PublicKey>,
    pub local_htlc_pubkey: Option<PublicKey>,
    pub remote_htlc_pubkey: Option<PublicKey>,
    pub iot_htlc_pubkey: Option<PublicKey>,
    pub payment_hash: Option<[u8; 32]>,
    pub csv_delay: Option<u16>,
    pub cltv_expiry: Option<u32>,
}

fn need<T: Copy>(v: Option<T>, name: &'static str) -> Result<T, ScriptError> {
    v.ok_or(ScriptError::MissingParam(name))
}

pub fn commitment_output_script(
    side: Side,
    kind: OutputKind,
    p: &ScriptParams,
) -> Result<Script, ScriptError> {
    match (side, kind) {
        (_, OutputKind::ToIot) => Ok(p2pk_script(&need(p.iot_pubkey, "iot_pubkey")?)),
        (_, OutputKind::ToRemote) => Ok(p2pk_script(&need(p.remote_pubkey, "remote_pubkey")?)),
        (_, OutputKind::ToLocal) => Ok(revocable_delayed_script(
            &need(p.revocation_pubkey, "revocation_pubkey")?,
            need(p.csv_delay, "csv_delay")?,
            &need(p.delayed_pubkey, "delayed_pubkey")?,
        )),
        (Side::Gateway, OutputKind::OfferedHtlc) => Ok(offered_htlc_script(
            &need(p.revocation_pubkey, "revocation_pubkey")?,
            &need(p.remote_htlc_pubkey, "remote_htlc_pubkey")?,
            &need(p.local_htlc_pubkey, "local_htlc_pubkey")?,
            &need(p.iot_htlc_pubkey, "iot_htlc_pubkey")?,
            &need(p.payment_hash, "payment_hash")?,
        )),
        (Side::Bridge, OutputKind::ReceivedHtlc) => Ok(received_htlc_script(
            &need(p.revocation_pubkey, "revocation_pubkey")?,
            &need(p.remote_htlc_pubkey, "remote_htlc_pubkey")?,
            &need(p.local_htlc_pubkey, "local_htlc_pubkey")?,
            &need(p.iot_htlc_pubkey, "iot_htlc_pubkey")?,
            &need(p.payment_hash, "payment_hash")?,
            need(p.cltv_expiry, "cltv_expiry")?,
        )),
        (Side::Bridge, OutputKind::OfferedHtlc) => {
            Err(ScriptError::UnsupportedSide("offered HTLC", "bridge"))
        }
        (Side::Gateway, OutputKind::ReceivedHtlc) => {
            Err(ScriptError::UnsupportedSide("received HTLC", "gateway"))
        }
    }
}

fn multisig_script(keys: &mut [PublicKey]) -> Result<Script, ScriptError> {
    keys.sort();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScriptError::DuplicateKey);
    }
    let n = keys.len() as i64;
    let mut tokens = vec![Token::num(n)];
    tokens.extend(keys.iter().map(|k| Token::push(k.as_bytes())));
    tokens.push(Token::num(n));
    tokens.push(Token::Op(Opcode::CheckMultiSig));
    Ok(Script::new(tokens))
}

/// `3 <pkA> <pkB> <pkC> 3 OP_CHECKMULTISIG`, keys sorted lexicographically.
pub fn funding_script(
    iot: &PublicKey,
    gateway: &PublicKey,
    bridge: &PublicKey,
) -> Result<Script, ScriptError> {
    multisig_script(&mut [*iot, *gateway, *bridge])
}

/// Two-party `2 <pk1> <pk2> 2 OP_CHECKMULTISIG`.
pub fn two_party_funding_script(a: &PublicKey, b: &PublicKey) -> Result<Script, ScriptError> {
    multisig_script(&mut [*a, *b])
}

/// `<pk> OP_CHECKSIG`. Used for `to_IoT`, `to_remote`, closing outputs and
/// wallet outputs.
pub fn p2pk_script(pk: &PublicKey) -> Script {
    Script::new(vec![Token::push(pk.as_bytes()), Token::Op(Opcode::CheckSig)])
}

/// ```text
/// OP_IF
///     <revocationpubkey> OP_CHECKSIG
/// OP_ELSE
///     <csv_delay> OP_CHECKSEQUENCEVERIFY OP_DROP <delayedpubkey> OP_CHECKSIG
/// OP_ENDIF
/// ```
pub fn revocable_delayed_script(
    revocation: &PublicKey,
    csv_delay: u16,
    delayed: &PublicKey,
) -> Script {
    Script::new(vec![
        Token::Op(Opcode::If),
        Token::push(revocation.as_bytes()),
        Token::Op(Opcode::CheckSig),
        Token::Op(Opcode::Else),
        Token::num(csv_delay as i64),
        Token::Op(Opcode::CheckSequenceVerify),
        Token::Op(Opcode::Drop),
        Token::push(delayed.as_bytes()),
        Token::Op(Opcode::CheckSig),
        Token::Op(Opcode::EndIf),
    ])
}

fn revocation_check(revocation: &PublicKey) -> Vec<Token> {
    vec![
        Token::Op(Opcode::Dup),
        Token::Op(Opcode::Hash160),
        Token::push(hash160(revocation.as_bytes())),
        Token::Op(Opcode::Equal),
        Token::Op(Opcode::If),
        Token::Op(Opcode::CheckSig),
        Token::Op(Opcode::Else),
    ]
}

/// Offered HTLC on the gateway's commitment:
///
/// ```text
/// OP_DUP OP_HASH160 <RIPEMD160(SHA256(revocationpubkey))> OP_EQUAL
/// OP_IF
///     OP_CHECKSIG
/// OP_ELSE
///     <remote_htlcpubkey> OP_SWAP OP_SIZE 32 OP_EQUAL
///     OP_NOTIF
///         OP_DROP 3 OP_SWAP <local_htlcpubkey> <IoT_htlcpubkey> 3 OP_CHECKMULTISIG
///     OP_ELSE
///         OP_HASH160 <RIPEMD160(payment_hash)> OP_EQUALVERIFY OP_CHECKSIG
///     OP_ENDIF
/// OP_ENDIF
/// ```
///
/// The timeout path is 3-of-3 (remote, local, IoT, in that signature order)
/// so that it matches the three-signature HTLC-timeout witness.
pub fn offered_htlc_script(
    revocation: &PublicKey,
    remote_htlc: &PublicKey,
    local_htlc: &PublicKey,
    iot_htlc: &PublicKey,
    payment_hash: &[u8; 32],
) -> Script {
    let mut t = revocation_check(revocation);
    t.extend([
        Token::push(remote_htlc.as_bytes()),
        Token::Op(Opcode::Swap),
        Token::Op(Opcode::Size),
        Token::num(32),
        Token::Op(Opcode::Equal),
        Token::Op(Opcode::NotIf),
        Token::Op(Opcode::Drop),
        Token::num(3),
        Token::Op(Opcode::Swap),
        Token::push(local_htlc.as_bytes()),
        Token::push(iot_htlc.as_bytes()),
        Token::num(3),
        Token::Op(Opcode::CheckMultiSig),
        Token::Op(Opcode::Else),
        Token::Op(Opcode::Hash160),
        Token::push(ripemd160(payment_hash)),
        Token::Op(Opcode::EqualVerify),
        Token::Op(Opcode::CheckSig),
        Token::Op(Opcode::EndIf),
        Token::Op(Opcode::EndIf),
    ]);
    Script::new(t)
}

/// Received HTLC on the bridge's commitment:
///
/// ```text
/// OP_DUP OP_HASH160 <RIPEMD160(SHA256(revocationpubkey))> OP_EQUAL
/// OP_IF
///     OP_CHECKSIG
/// OP_ELSE
///     <remote_htlcpubkey> OP_SWAP OP_SIZE 32 OP_EQUAL
///     OP_IF
///         OP_HASH160 <RIPEMD160(payment_hash)> OP_EQUALVERIFY
///         3 OP_SWAP <IoT_htlcpubkey> <local_htlcpubkey> 3 OP_CHECKMULTISIG
///     OP_ELSE
///         OP_DROP <cltv_expiry> OP_CHECKLOCKTIMEVERIFY OP_DROP OP_CHECKSIG
///     OP_ENDIF
/// OP_ENDIF
/// ```
pub fn received_htlc_script(
    revocation: &PublicKey,
    remote_htlc: &PublicKey,
    local_htlc: &PublicKey,
    iot_htlc: &PublicKey,
    payment_hash: &[u8; 32],
    cltv_expiry: u32,
) -> Script {
    let mut t = revocation_check(revocation);
    t.extend([
        Token::push(remote_htlc.as_bytes()),
        Token::Op(Opcode::Swap),
        Token::Op(Opcode::Size),
        Token::num(32),
        Token::Op(Opcode::Equal),
        Token::Op(Opcode::If),
        Token::Op(Opcode::Hash160),
        Token::push(ripemd160(payment_hash)),
        Token::Op(Opcode::EqualVerify),
        Token::num(3),
        Token::Op(Opcode::Swap),
        Token::push(iot_htlc.as_bytes()),
        Token::push(local_htlc.as_bytes()),
        Token::num(3),
        Token::Op(Opcode::CheckMultiSig),
        Token::Op(Opcode::Else),
        Token::Op(Opcode::Drop),
        Token::num(cltv_expiry as i64),
        Token::Op(Opcode::CheckLockTimeVerify),
        Token::Op(Opcode::Drop),
        Token::Op(Opcode::CheckSig),
        Token::Op(Opcode::EndIf),
        Token::Op(Opcode::EndIf),
    ]);
    Script::new(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HtlcTxKind {
    Timeout,
    Success,
}

/// The three second-stage HTLC signatures, named from the commitment owner's
/// point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HtlcSigs {
    pub remote: Signature,
    pub local: Signature,
    pub iot: Signature,
}

/// Timeout: `0 <remotehtlcsig> <localhtlcsig> <IoThtlcsig> <>`.
/// Success: `0 <remotehtlcsig> <IoThtlcsig> <localhtlcsig> <payment_preimage>`.
pub fn htlc_tx_witness(
    kind: HtlcTxKind,
    sigs: &HtlcSigs,
    preimage: Option<&[u8; 32]>,
) -> Result<Witness, ScriptError> {
    let items = match kind {
        HtlcTxKind::Timeout => vec![
            Vec::new(),
            sigs.remote.0.to_vec(),
            sigs.local.0.to_vec(),
            sigs.iot.0.to_vec(),
            Vec::new(),
        ],
        HtlcTxKind::Success => {
            let preimage = preimage.ok_or(ScriptError::MissingPreimage)?;
            vec![
                Vec::new(),
                sigs.remote.0.to_vec(),
                sigs.iot.0.to_vec(),
                sigs.local.0.to_vec(),
                preimage.to_vec(),
            ]
        }
    };
    Ok(Witness(items))
}

/// `0 <sig_for_pubkey1> <sig_for_pubkey2> <sig_for_pubkey3>` with signatures
/// ordered like the sorted keys of [`funding_script`].
pub fn multisig_witness(mut pairs: Vec<(PublicKey, Signature)>) -> Witness {
    pairs.sort_by_key(|p| p.0);
    let mut items = vec![Vec::new()];
    items.extend(pairs.into_iter().map(|(_, s)| s.0.to_vec()));
    Witness(items)
}

pub fn p2pk_witness(sig: &Signature) -> Witness {
    Witness(vec![sig.0.to_vec()])
}

/// Spends a [`revocable_delayed_script`] through the revocation branch.
pub fn revocation_witness(sig: &Signature) -> Witness {
    Witness(vec![sig.0.to_vec(), vec![1]])
}

/// Spends a [`revocable_delayed_script`] through the CSV-delayed branch.
pub fn delayed_witness(sig: &Signature) -> Witness {
    Witness(vec![sig.0.to_vec(), Vec::new()])
}

/// Spends an HTLC output through its revocation check.
pub fn htlc_revocation_witness(sig: &Signature, revocation: &PublicKey) -> Witness {
    Witness(vec![sig.0.to_vec(), revocation.as_bytes().to_vec()])
}

/// Remote party claims an offered HTLC directly with the preimage.
pub fn htlc_preimage_witness(sig: &Signature, preimage: &[u8; 32]) -> Witness {
    Witness(vec![sig.0.to_vec(), preimage.to_vec()])
}

/// Remote party reclaims a received HTLC after its CLTV expiry.
pub fn htlc_expiry_witness(sig: &Signature) -> Witness {
    Witness(vec![sig.0.to_vec(), Vec::new()])
}
