//! Role state machines for the IoT device, the gateway and the bridge.
//!
//! Each role is a value type with a pure `step`: it takes an [`Input`] and
//! returns the successor state plus the [`Effect`]s to perform. A failed step
//! returns an error and leaves the original state untouched. The caller owns
//! the event loop, transport and chain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256, Digest, PublicKey, SecretKey};
use crate::tx::{CommitmentTx, Tx, TxError};

mod bridge;
mod closing;
mod gateway;
mod iot;
mod messages;
mod revocation;

pub use bridge::{BridgeConfig, BridgeState};
pub use closing::{negotiate_close, FeeNegotiator, NegotiationDiverged, NegotiationOutcome, Offer};
pub use gateway::{CloseMode, GatewayConfig, GatewayState};
pub use iot::{IotConfig, IotState};
pub use messages::{
    msg_type, open_message, seal_message, DecodeError, IotMessage, Message, MessageError,
    PeerMessage,
};
pub use revocation::{CommitmentSecret, OutOfOrderReveal, RevocationChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Iot,
    Gateway,
    Bridge,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Iot => "iot",
            Role::Gateway => "gateway",
            Role::Bridge => "bridge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Opening,
    AwaitFundingSig,
    AwaitFundingLocked,
    Operational,
    AwaitIotSig,
    AwaitRevokeAck,
    Closing,
    Closed,
}

/// Local instructions from whoever drives a role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    /// IoT device: open a channel of this capacity.
    Open { capacity_sat: u64 },
    /// IoT device: pay a destination node.
    Pay {
        amount_sat: u64,
        destination: PublicKey,
    },
    /// IoT device or gateway: close the channel.
    Close,
    /// Bridge: broadcast its latest commitment.
    ForceClose,
    /// Broadcast an already revoked commitment of one's own. The gateway
    /// first obtains the IoT signature for it. Models a cheating party.
    BroadcastRevoked { state_index: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainEvent {
    /// A new block was mined. `funding_confirmations` is zero until the
    /// funding transaction is in a block.
    Block {
        height: u32,
        funding_confirmations: u32,
    },
    /// A transaction not broadcast by this role spent the funding output.
    FundingSpent { txid: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Message { from: Role, msg: Message },
    Command(Command),
    Chain(ChainEvent),
    /// The awaited counterparty did not answer within the deadline.
    Timeout,
}

impl Input {
    pub fn msg(from: Role, msg: impl Into<Message>) -> Input {
        Input::Message {
            from,
            msg: msg.into(),
        }
    }
}

/// Observable milestones, used by the harness for timings and audits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    ChannelOperational,
    /// The IoT device signed this digest.
    Signed { digest: Digest },
    PaymentCompleted { amount_sat: u64 },
    /// The bridge revoked its commitment for this state.
    Revoked { state_index: u64 },
    BridgeUnresponsive,
    ClosingFeeAgreed { fee_sat: u64 },
    ChannelClosed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Send { to: Role, msg: Message },
    Broadcast(Tx),
    Event(Event),
}

impl Effect {
    pub fn send(to: Role, msg: impl Into<Message>) -> Effect {
        Effect::Send { to, msg: msg.into() }
    }
}

/// A counterparty commitment that has been revoked, with the key that
/// spends its revocable outputs.
#[derive(Clone, Debug)]
pub struct RevokedCommitment {
    pub commitment: CommitmentTx,
    pub revocation_key: SecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unexpected {0}")]
    UnexpectedMessage(&'static str),
    #[error("to_IoT pays {found} sat, expected at least {expected} sat")]
    BalanceCheckFailed { expected: u64, found: u64 },
    #[error("commitment_signed carries no IoT signature")]
    MissingIotSignature,
    #[error("invalid {0} signature")]
    InvalidSignature(&'static str),
    #[error("payment of {amount} sat does not exceed the {fee} sat service fee")]
    FeeUnderflow { amount: u64, fee: u64 },
    #[error("fee payer balance {balance} sat cannot cover closing fee {fee} sat")]
    InsufficientBalanceForFee { balance: u64, fee: u64 },
    #[error(transparent)]
    NegotiationDiverged(#[from] NegotiationDiverged),
    #[error("bridge did not respond")]
    BridgeUnresponsive,
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error(transparent)]
    Tx(TxError),
}

impl From<TxError> for ProtocolError {
    fn from(e: TxError) -> ProtocolError {
        match e {
            TxError::FeeUnderflow { amount, fee } => ProtocolError::FeeUnderflow { amount, fee },
            TxError::InsufficientBalanceForFee { balance, fee } => {
                ProtocolError::InsufficientBalanceForFee { balance, fee }
            }
            other => ProtocolError::Tx(other),
        }
    }
}

/// A [`ProtocolError`] with the role and phase it happened in.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} in phase {phase:?}: {error}", role.name())]
pub struct StepError {
    pub role: Role,
    pub phase: Phase,
    pub error: ProtocolError,
}

pub type StepResult<S> = Result<(S, Vec<Effect>), StepError>;

fn invalid(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidMessage(msg.into())
}

fn unexpected(input: &Input) -> ProtocolError {
    ProtocolError::UnexpectedMessage(match input {
        Input::Message { msg, .. } => msg.name(),
        Input::Command(Command::Open { .. }) => "open command",
        Input::Command(Command::Pay { .. }) => "pay command",
        Input::Command(Command::Close) => "close command",
        Input::Command(Command::ForceClose) => "force-close command",
        Input::Command(Command::BroadcastRevoked { .. }) => "broadcast-revoked command",
        Input::Chain(_) => "chain event",
        Input::Timeout => "timeout",
    })
}

/// Invoice the destination hands out for a payment: the preimage stays with
/// the destination, the hash goes into the HTLC.
pub fn invoice(destination: &PublicKey, amount_sat: u64, nonce: u64) -> ([u8; 32], Digest) {
    let mut buf = Vec::with_capacity(33 + 16);
    buf.extend_from_slice(&destination.0);
    buf.extend_from_slice(&amount_sat.to_be_bytes());
    buf.extend_from_slice(&nonce.to_be_bytes());
    let preimage = sha256(&buf);
    (preimage, Digest::sha256(&preimage))
}

/// Parses a destination node id given as 66 hex characters.
pub fn parse_node_id(s: &str) -> Result<PublicKey, ProtocolError> {
    s.parse::<PublicKey>()
        .map_err(|_| invalid(format!("destination node id {s:?} is not a 33-byte hex key")))
}
