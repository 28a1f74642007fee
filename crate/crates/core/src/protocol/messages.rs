//! Wire messages and their codec.
//!
//! Encoding is `msg_type || body`. Integers are big-endian, keys and
//! signatures fixed-width, transactions and lists length-prefixed. Peer
//! messages reuse the BOLT #2 type numbers; IoT-link messages use 1..=11.

use crate::crypto::{
    open, seal, Digest, EnvelopeError, EnvelopeKeys, PublicKey, SecureEnvelope, Signature,
    PUBKEY_LEN, SIGNATURE_LEN,
};
use crate::tx::{ChannelParams, FeePayer, FundingInput, IotKeys, NodeKeys, OutPoint, Tx};

use super::revocation::CommitmentSecret;

/// Messages between the IoT device and its gateway.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IotMessage {
    OpenChannelRequest {
        capacity_sat: u64,
        keys: IotKeys,
        wallet: FundingInput,
    },
    /// Channel terms plus the bridge's first commitment, which the device
    /// rebuilds and checks before signing.
    FundingSignatureRequest {
        params: ChannelParams,
        wallet: FundingInput,
        commitment_tx: Tx,
    },
    /// `signature` covers the bridge's first commitment, `funding_signature`
    /// the funding transaction input.
    FundingSigned {
        signature: Signature,
        funding_signature: Signature,
    },
    SendPayment {
        amount_sat: u64,
        destination: PublicKey,
    },
    SignTxRequest {
        commitment_tx: Tx,
        htlc_txs: Vec<Tx>,
    },
    TxSigned {
        signature: Signature,
        htlc_signatures: Vec<Signature>,
    },
    PaymentSuccess,
    ChannelClosingRequest,
    ClosingTxRequest {
        closing_tx: Tx,
    },
    ClosingTxSigned {
        signature: Signature,
    },
    ChannelClosed,
}

/// Messages between the gateway and the bridge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PeerMessage {
    OpenChannel {
        capacity_sat: u64,
        fee_rate_permille: u16,
        csv_delay: u16,
        onchain_fee_sat: u64,
        funding_depth: u32,
        iot: IotKeys,
        gateway: NodeKeys,
        first_point: PublicKey,
    },
    AcceptChannel {
        bridge: NodeKeys,
        first_point: PublicKey,
    },
    FundingCreated {
        funding_outpoint: OutPoint,
        sig_iot: Signature,
        sig_gateway: Signature,
    },
    FundingSigned {
        signature: Signature,
    },
    FundingLocked {
        next_point: PublicKey,
    },
    /// The destination travels in clear instead of inside an onion packet.
    UpdateAddHtlc {
        id: u64,
        amount_sat: u64,
        service_fee_sat: u64,
        payment_hash: Digest,
        expiry_height: u32,
        destination: PublicKey,
    },
    /// Signatures for the receiver's next commitment. `sig_iot` and
    /// `htlc_sigs_iot` are only present when the gateway signs the bridge's
    /// commitment.
    CommitmentSigned {
        sig_iot: Option<Signature>,
        signature: Signature,
        htlc_sigs_iot: Vec<Signature>,
        htlc_signatures: Vec<Signature>,
    },
    RevokeAndAck {
        secret: CommitmentSecret,
        next_point: PublicKey,
    },
    Shutdown {
        fee_payer: FeePayer,
    },
    ClosingSigned {
        fee_sat: u64,
        signature: Signature,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Iot(IotMessage),
    Peer(PeerMessage),
}

impl From<IotMessage> for Message {
    fn from(m: IotMessage) -> Message {
        Message::Iot(m)
    }
}

impl From<PeerMessage> for Message {
    fn from(m: PeerMessage) -> Message {
        Message::Peer(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("message truncated")]
    Truncated,
    #[error("trailing bytes after message")]
    TrailingBytes,
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub mod msg_type {
    pub const OPEN_CHANNEL_REQUEST: u8 = 1;
    pub const FUNDING_SIGNATURE_REQUEST: u8 = 2;
    pub const IOT_FUNDING_SIGNED: u8 = 3;
    pub const SEND_PAYMENT: u8 = 4;
    pub const SIGN_TX_REQUEST: u8 = 5;
    pub const TX_SIGNED: u8 = 6;
    pub const PAYMENT_SUCCESS: u8 = 7;
    pub const CHANNEL_CLOSING_REQUEST: u8 = 8;
    pub const CLOSING_TX_REQUEST: u8 = 9;
    pub const CLOSING_TX_SIGNED: u8 = 10;
    pub const CHANNEL_CLOSED: u8 = 11;

    pub const OPEN_CHANNEL: u8 = 32;
    pub const ACCEPT_CHANNEL: u8 = 33;
    pub const FUNDING_CREATED: u8 = 34;
    pub const FUNDING_SIGNED: u8 = 35;
    pub const FUNDING_LOCKED: u8 = 36;
    pub const SHUTDOWN: u8 = 38;
    pub const CLOSING_SIGNED: u8 = 39;
    pub const UPDATE_ADD_HTLC: u8 = 128;
    pub const COMMITMENT_SIGNED: u8 = 132;
    pub const REVOKE_AND_ACK: u8 = 133;
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }
    fn pk(&mut self, pk: &PublicKey) -> &mut Self {
        self.raw(&pk.0)
    }
    fn sig(&mut self, s: &Signature) -> &mut Self {
        self.raw(&s.0)
    }
    fn sigs(&mut self, s: &[Signature]) -> &mut Self {
        self.u16(s.len() as u16);
        for sig in s {
            self.sig(sig);
        }
        self
    }
    fn tx(&mut self, tx: &Tx) -> &mut Self {
        let b = tx.to_bytes();
        self.u32(b.len() as u32).raw(&b)
    }
    fn outpoint(&mut self, o: &OutPoint) -> &mut Self {
        self.raw(&o.txid.0).u32(o.vout)
    }
    fn wallet(&mut self, w: &FundingInput) -> &mut Self {
        self.outpoint(&w.outpoint).u64(w.value_sat)
    }
    fn iot_keys(&mut self, k: &IotKeys) -> &mut Self {
        self.pk(&k.funding).pk(&k.payment).pk(&k.delayed).pk(&k.htlc)
    }
    fn node_keys(&mut self, k: &NodeKeys) -> &mut Self {
        self.pk(&k.funding)
            .pk(&k.payment)
            .pk(&k.delayed)
            .pk(&k.htlc)
            .pk(&k.revocation_basepoint)
    }
    fn params(&mut self, p: &ChannelParams) -> &mut Self {
        self.u64(p.capacity_sat)
            .iot_keys(&p.iot)
            .node_keys(&p.gateway)
            .node_keys(&p.bridge)
            .u16(p.csv_delay)
            .u16(p.fee_rate_permille)
            .u64(p.onchain_fee_sat)
            .u32(p.funding_depth)
    }
    fn fee_payer(&mut self, f: FeePayer) -> &mut Self {
        self.u8(match f {
            FeePayer::Iot => 0,
            FeePayer::Gateway => 1,
        })
    }
}

struct Reader<'a> {
    b: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.b.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.b.split_at(n);
        self.b = tail;
        Ok(head)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.arr()?))
    }
    fn pk(&mut self) -> Result<PublicKey, DecodeError> {
        Ok(PublicKey(self.arr::<PUBKEY_LEN>()?))
    }
    fn sig(&mut self) -> Result<Signature, DecodeError> {
        Ok(Signature(self.arr::<SIGNATURE_LEN>()?))
    }
    fn sigs(&mut self) -> Result<Vec<Signature>, DecodeError> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.sig()).collect()
    }
    fn tx(&mut self) -> Result<Tx, DecodeError> {
        let n = self.u32()? as usize;
        Tx::from_bytes(self.take(n)?).map_err(|_| DecodeError::InvalidField("transaction"))
    }
    fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.arr()?))
    }
    fn outpoint(&mut self) -> Result<OutPoint, DecodeError> {
        Ok(OutPoint {
            txid: self.digest()?,
            vout: self.u32()?,
        })
    }
    fn wallet(&mut self) -> Result<FundingInput, DecodeError> {
        Ok(FundingInput {
            outpoint: self.outpoint()?,
            value_sat: self.u64()?,
        })
    }
    fn iot_keys(&mut self) -> Result<IotKeys, DecodeError> {
        Ok(IotKeys {
            funding: self.pk()?,
            payment: self.pk()?,
            delayed: self.pk()?,
            htlc: self.pk()?,
        })
    }
    fn node_keys(&mut self) -> Result<NodeKeys, DecodeError> {
        Ok(NodeKeys {
            funding: self.pk()?,
            payment: self.pk()?,
            delayed: self.pk()?,
            htlc: self.pk()?,
            revocation_basepoint: self.pk()?,
        })
    }
    fn params(&mut self) -> Result<ChannelParams, DecodeError> {
        Ok(ChannelParams {
            capacity_sat: self.u64()?,
            iot: self.iot_keys()?,
            gateway: self.node_keys()?,
            bridge: self.node_keys()?,
            csv_delay: self.u16()?,
            fee_rate_permille: self.u16()?,
            onchain_fee_sat: self.u64()?,
            funding_depth: self.u32()?,
        })
    }
    fn fee_payer(&mut self) -> Result<FeePayer, DecodeError> {
        match self.u8()? {
            0 => Ok(FeePayer::Iot),
            1 => Ok(FeePayer::Gateway),
            _ => Err(DecodeError::InvalidField("fee_payer")),
        }
    }
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Iot(m) => match m {
                IotMessage::OpenChannelRequest { .. } => OPEN_CHANNEL_REQUEST,
                IotMessage::FundingSignatureRequest { .. } => FUNDING_SIGNATURE_REQUEST,
                IotMessage::FundingSigned { .. } => IOT_FUNDING_SIGNED,
                IotMessage::SendPayment { .. } => SEND_PAYMENT,
                IotMessage::SignTxRequest { .. } => SIGN_TX_REQUEST,
                IotMessage::TxSigned { .. } => TX_SIGNED,
                IotMessage::PaymentSuccess => PAYMENT_SUCCESS,
                IotMessage::ChannelClosingRequest => CHANNEL_CLOSING_REQUEST,
                IotMessage::ClosingTxRequest { .. } => CLOSING_TX_REQUEST,
                IotMessage::ClosingTxSigned { .. } => CLOSING_TX_SIGNED,
                IotMessage::ChannelClosed => CHANNEL_CLOSED,
            },
            Message::Peer(m) => match m {
                PeerMessage::OpenChannel { .. } => OPEN_CHANNEL,
                PeerMessage::AcceptChannel { .. } => ACCEPT_CHANNEL,
                PeerMessage::FundingCreated { .. } => FUNDING_CREATED,
                PeerMessage::FundingSigned { .. } => FUNDING_SIGNED,
                PeerMessage::FundingLocked { .. } => FUNDING_LOCKED,
                PeerMessage::UpdateAddHtlc { .. } => UPDATE_ADD_HTLC,
                PeerMessage::CommitmentSigned { .. } => COMMITMENT_SIGNED,
                PeerMessage::RevokeAndAck { .. } => REVOKE_AND_ACK,
                PeerMessage::Shutdown { .. } => SHUTDOWN,
                PeerMessage::ClosingSigned { .. } => CLOSING_SIGNED,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Iot(m) => match m {
                IotMessage::OpenChannelRequest { .. } => "OpenChannelRequest",
                IotMessage::FundingSignatureRequest { .. } => "FundingSignatureRequest",
                IotMessage::FundingSigned { .. } => "FundingSigned",
                IotMessage::SendPayment { .. } => "SendPayment",
                IotMessage::SignTxRequest { .. } => "SignTxRequest",
                IotMessage::TxSigned { .. } => "TxSigned",
                IotMessage::PaymentSuccess => "PaymentSuccess",
                IotMessage::ChannelClosingRequest => "ChannelClosingRequest",
                IotMessage::ClosingTxRequest { .. } => "ClosingTxRequest",
                IotMessage::ClosingTxSigned { .. } => "ClosingTxSigned",
                IotMessage::ChannelClosed => "ChannelClosed",
            },
            Message::Peer(m) => match m {
                PeerMessage::OpenChannel { .. } => "open_channel",
                PeerMessage::AcceptChannel { .. } => "accept_channel",
                PeerMessage::FundingCreated { .. } => "funding_created",
                PeerMessage::FundingSigned { .. } => "funding_signed",
                PeerMessage::FundingLocked { .. } => "funding_locked",
                PeerMessage::UpdateAddHtlc { .. } => "update_add_htlc",
                PeerMessage::CommitmentSigned { .. } => "commitment_signed",
                PeerMessage::RevokeAndAck { .. } => "revoke_and_ack",
                PeerMessage::Shutdown { .. } => "shutdown",
                PeerMessage::ClosingSigned { .. } => "closing_signed",
            },
        }
    }

    /// Body without the type byte.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Message::Iot(m) => match m {
                IotMessage::OpenChannelRequest {
                    capacity_sat,
                    keys,
                    wallet,
                } => {
                    w.u64(*capacity_sat).iot_keys(keys).wallet(wallet);
                }
                IotMessage::FundingSignatureRequest {
                    params,
                    wallet,
                    commitment_tx,
                } => {
                    w.params(params).wallet(wallet).tx(commitment_tx);
                }
                IotMessage::FundingSigned {
                    signature,
                    funding_signature,
                } => {
                    w.sig(signature).sig(funding_signature);
                }
                IotMessage::SendPayment {
                    amount_sat,
                    destination,
                } => {
                    w.u64(*amount_sat).pk(destination);
                }
                IotMessage::SignTxRequest {
                    commitment_tx,
                    htlc_txs,
                } => {
                    w.tx(commitment_tx).u16(htlc_txs.len() as u16);
                    for t in htlc_txs {
                        w.tx(t);
                    }
                }
                IotMessage::TxSigned {
                    signature,
                    htlc_signatures,
                } => {
                    w.sig(signature).sigs(htlc_signatures);
                }
                IotMessage::ClosingTxRequest { closing_tx } => {
                    w.tx(closing_tx);
                }
                IotMessage::ClosingTxSigned { signature } => {
                    w.sig(signature);
                }
                IotMessage::PaymentSuccess
                | IotMessage::ChannelClosingRequest
                | IotMessage::ChannelClosed => {}
            },
            Message::Peer(m) => match m {
                PeerMessage::OpenChannel {
                    capacity_sat,
                    fee_rate_permille,
                    csv_delay,
                    onchain_fee_sat,
                    funding_depth,
                    iot,
                    gateway,
                    first_point,
                } => {
                    w.u64(*capacity_sat)
                        .u16(*fee_rate_permille)
                        .u16(*csv_delay)
                        .u64(*onchain_fee_sat)
                        .u32(*funding_depth)
                        .iot_keys(iot)
                        .node_keys(gateway)
                        .pk(first_point);
                }
                PeerMessage::AcceptChannel {
                    bridge,
                    first_point,
                } => {
                    w.node_keys(bridge).pk(first_point);
                }
                PeerMessage::FundingCreated {
                    funding_outpoint,
                    sig_iot,
                    sig_gateway,
                } => {
                    w.outpoint(funding_outpoint).sig(sig_iot).sig(sig_gateway);
                }
                PeerMessage::FundingSigned { signature } => {
                    w.sig(signature);
                }
                PeerMessage::FundingLocked { next_point } => {
                    w.pk(next_point);
                }
                PeerMessage::UpdateAddHtlc {
                    id,
                    amount_sat,
                    service_fee_sat,
                    payment_hash,
                    expiry_height,
                    destination,
                } => {
                    w.u64(*id)
                        .u64(*amount_sat)
                        .u64(*service_fee_sat)
                        .raw(&payment_hash.0)
                        .u32(*expiry_height)
                        .pk(destination);
                }
                PeerMessage::CommitmentSigned {
                    sig_iot,
                    signature,
                    htlc_sigs_iot,
                    htlc_signatures,
                } => {
                    match sig_iot {
                        Some(s) => w.u8(1).sig(s),
                        None => w.u8(0),
                    };
                    w.sig(signature).sigs(htlc_sigs_iot).sigs(htlc_signatures);
                }
                PeerMessage::RevokeAndAck { secret, next_point } => {
                    w.raw(&secret.0).pk(next_point);
                }
                PeerMessage::Shutdown { fee_payer } => {
                    w.fee_payer(*fee_payer);
                }
                PeerMessage::ClosingSigned { fee_sat, signature } => {
                    w.u64(*fee_sat).sig(signature);
                }
            },
        }
        w.0
    }

    /// `msg_type || body`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.msg_type()];
        out.extend(self.encode_body());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let (&t, body) = bytes.split_first().ok_or(DecodeError::Truncated)?;
        Message::decode_body(t, body)
    }

    pub fn decode_body(msg_type: u8, body: &[u8]) -> Result<Message, DecodeError> {
        use msg_type::*;
        let mut r = Reader { b: body };
        let m: Message = match msg_type {
            OPEN_CHANNEL_REQUEST => IotMessage::OpenChannelRequest {
                capacity_sat: r.u64()?,
                keys: r.iot_keys()?,
                wallet: r.wallet()?,
            }
            .into(),
            FUNDING_SIGNATURE_REQUEST => IotMessage::FundingSignatureRequest {
                params: r.params()?,
                wallet: r.wallet()?,
                commitment_tx: r.tx()?,
            }
            .into(),
            IOT_FUNDING_SIGNED => IotMessage::FundingSigned {
                signature: r.sig()?,
                funding_signature: r.sig()?,
            }
            .into(),
            SEND_PAYMENT => IotMessage::SendPayment {
                amount_sat: r.u64()?,
                destination: r.pk()?,
            }
            .into(),
            SIGN_TX_REQUEST => {
                let commitment_tx = r.tx()?;
                let n = r.u16()?;
                let htlc_txs = (0..n).map(|_| r.tx()).collect::<Result<_, _>>()?;
                IotMessage::SignTxRequest {
                    commitment_tx,
                    htlc_txs,
                }
                .into()
            }
            TX_SIGNED => IotMessage::TxSigned {
                signature: r.sig()?,
                htlc_signatures: r.sigs()?,
            }
            .into(),
            PAYMENT_SUCCESS => IotMessage::PaymentSuccess.into(),
            CHANNEL_CLOSING_REQUEST => IotMessage::ChannelClosingRequest.into(),
            CLOSING_TX_REQUEST => IotMessage::ClosingTxRequest {
                closing_tx: r.tx()?,
            }
            .into(),
            CLOSING_TX_SIGNED => IotMessage::ClosingTxSigned {
                signature: r.sig()?,
            }
            .into(),
            CHANNEL_CLOSED => IotMessage::ChannelClosed.into(),

            OPEN_CHANNEL => PeerMessage::OpenChannel {
                capacity_sat: r.u64()?,
                fee_rate_permille: r.u16()?,
                csv_delay: r.u16()?,
                onchain_fee_sat: r.u64()?,
                funding_depth: r.u32()?,
                iot: r.iot_keys()?,
                gateway: r.node_keys()?,
                first_point: r.pk()?,
            }
            .into(),
            ACCEPT_CHANNEL => PeerMessage::AcceptChannel {
                bridge: r.node_keys()?,
                first_point: r.pk()?,
            }
            .into(),
            FUNDING_CREATED => PeerMessage::FundingCreated {
                funding_outpoint: r.outpoint()?,
                sig_iot: r.sig()?,
                sig_gateway: r.sig()?,
            }
            .into(),
            FUNDING_SIGNED => PeerMessage::FundingSigned {
                signature: r.sig()?,
            }
            .into(),
            FUNDING_LOCKED => PeerMessage::FundingLocked {
                next_point: r.pk()?,
            }
            .into(),
            UPDATE_ADD_HTLC => PeerMessage::UpdateAddHtlc {
                id: r.u64()?,
                amount_sat: r.u64()?,
                service_fee_sat: r.u64()?,
                payment_hash: r.digest()?,
                expiry_height: r.u32()?,
                destination: r.pk()?,
            }
            .into(),
            COMMITMENT_SIGNED => {
                let sig_iot = match r.u8()? {
                    0 => None,
                    1 => Some(r.sig()?),
                    _ => return Err(DecodeError::InvalidField("sig_iot flag")),
                };
                PeerMessage::CommitmentSigned {
                    sig_iot,
                    signature: r.sig()?,
                    htlc_sigs_iot: r.sigs()?,
                    htlc_signatures: r.sigs()?,
                }
                .into()
            }
            REVOKE_AND_ACK => PeerMessage::RevokeAndAck {
                secret: CommitmentSecret(r.arr()?),
                next_point: r.pk()?,
            }
            .into(),
            SHUTDOWN => PeerMessage::Shutdown {
                fee_payer: r.fee_payer()?,
            }
            .into(),
            CLOSING_SIGNED => PeerMessage::ClosingSigned {
                fee_sat: r.u64()?,
                signature: r.sig()?,
            }
            .into(),
            t => return Err(DecodeError::UnknownType(t)),
        };
        if !r.b.is_empty() {
            return Err(DecodeError::TrailingBytes);
        }
        Ok(m)
    }
}

/// Encrypts `m` for the IoT link.
pub fn seal_message(m: &Message, keys: &EnvelopeKeys) -> SecureEnvelope {
    seal(m.msg_type(), &m.encode_body(), keys)
}

/// Authenticates, decrypts and decodes an IoT-link envelope.
pub fn open_message(env: &SecureEnvelope, keys: &EnvelopeKeys) -> Result<Message, MessageError> {
    let body = open(env, keys)?;
    Ok(Message::decode_body(env.msg_type, &body)?)
}
