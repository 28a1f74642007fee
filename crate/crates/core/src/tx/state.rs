use serde::{Deserialize, Serialize};

use crate::crypto::{derive_keypair, Digest, KeyPair, PublicKey};
use crate::script::{funding_script, Script};

use super::TxError;

pub const DEFAULT_CSV_DELAY: u16 = 144;
pub const DEFAULT_FUNDING_DEPTH: u32 = 3;

/// Public keys contributed by the IoT device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IotKeys {
    pub funding: PublicKey,
    /// `IoT_pubkey`, the key behind every `to_IoT` output.
    pub payment: PublicKey,
    /// `IoT_delayedpubkey`, receives HTLC-timeout outputs.
    pub delayed: PublicKey,
    pub htlc: PublicKey,
}

/// Public keys contributed by the gateway or the bridge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeKeys {
    pub funding: PublicKey,
    pub payment: PublicKey,
    pub delayed: PublicKey,
    pub htlc: PublicKey,
    pub revocation_basepoint: PublicKey,
}

/// Private half of [`IotKeys`].
#[derive(Clone, Debug)]
pub struct IotSecrets {
    pub funding: KeyPair,
    pub payment: KeyPair,
    pub delayed: KeyPair,
    pub htlc: KeyPair,
}

impl IotSecrets {
    pub fn derive(material: &[u8]) -> IotSecrets {
        IotSecrets {
            funding: derive_keypair(material, "iot/funding"),
            payment: derive_keypair(material, "iot/payment"),
            delayed: derive_keypair(material, "iot/delayed"),
            htlc: derive_keypair(material, "iot/htlc"),
        }
    }

    pub fn public(&self) -> IotKeys {
        IotKeys {
            funding: self.funding.public,
            payment: self.payment.public,
            delayed: self.delayed.public,
            htlc: self.htlc.public,
        }
    }
}

/// Private half of [`NodeKeys`].
#[derive(Clone, Debug)]
pub struct NodeSecrets {
    pub funding: KeyPair,
    pub payment: KeyPair,
    pub delayed: KeyPair,
    pub htlc: KeyPair,
    pub revocation_base: KeyPair,
}

impl NodeSecrets {
    pub fn derive(material: &[u8], role: &str) -> NodeSecrets {
        let k = |what: &str| derive_keypair(material, &format!("{role}/{what}"));
        NodeSecrets {
            funding: k("funding"),
            payment: k("payment"),
            delayed: k("delayed"),
            htlc: k("htlc"),
            revocation_base: k("revocation"),
        }
    }

    pub fn public(&self) -> NodeKeys {
        NodeKeys {
            funding: self.funding.public,
            payment: self.payment.public,
            delayed: self.delayed.public,
            htlc: self.htlc.public,
            revocation_basepoint: self.revocation_base.public,
        }
    }
}

/// Static terms of one channel, fixed at opening.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub capacity_sat: u64,
    pub iot: IotKeys,
    pub gateway: NodeKeys,
    pub bridge: NodeKeys,
    /// Blocks a broadcaster waits before sweeping its own revocable outputs.
    pub csv_delay: u16,
    /// Gateway service fee in thousandths of the payment amount.
    pub fee_rate_permille: u16,
    /// Fee attached to each funding, closing and second-stage HTLC transaction.
    pub onchain_fee_sat: u64,
    pub funding_depth: u32,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), TxError> {
        if self.capacity_sat <= self.onchain_fee_sat {
            return Err(TxError::InvalidParams(format!(
                "capacity {} must exceed on-chain fee {}",
                self.capacity_sat, self.onchain_fee_sat
            )));
        }
        if self.fee_rate_permille > 1000 {
            return Err(TxError::InvalidParams(format!(
                "fee rate {} permille exceeds 1000",
                self.fee_rate_permille
            )));
        }
        if self.csv_delay == 0 {
            return Err(TxError::InvalidParams("csv_delay must be positive".into()));
        }
        self.funding_script()?;
        Ok(())
    }

    pub fn funding_script(&self) -> Result<Script, TxError> {
        Ok(funding_script(
            &self.iot.funding,
            &self.gateway.funding,
            &self.bridge.funding,
        )?)
    }

    /// `floor(amount * k / 1000)`.
    pub fn service_fee(&self, amount_sat: u64) -> u64 {
        (amount_sat as u128 * self.fee_rate_permille as u128 / 1000) as u64
    }
}

/// An HTLC offered by the gateway (on the IoT device's behalf) to the bridge.
/// The IoT device never receives payments, so this is the only direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Htlc {
    pub id: u64,
    pub amount_sat: u64,
    pub payment_hash: Digest,
    pub expiry_height: u32,
}

/// Balances and pending HTLCs for one commitment state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub state_index: u64,
    pub balance_iot_sat: u64,
    pub balance_gateway_fees_sat: u64,
    pub balance_bridge_sat: u64,
    pub htlcs: Vec<Htlc>,
    /// Per-commitment points for this state; the revocation key of each
    /// side's commitment is derived from them.
    pub gateway_point: PublicKey,
    pub bridge_point: PublicKey,
}

impl ChannelSnapshot {
    /// State 0: the IoT device holds the whole capacity.
    pub fn initial(capacity_sat: u64, gateway_point: PublicKey, bridge_point: PublicKey) -> Self {
        ChannelSnapshot {
            state_index: 0,
            balance_iot_sat: capacity_sat,
            balance_gateway_fees_sat: 0,
            balance_bridge_sat: 0,
            htlcs: Vec::new(),
            gateway_point,
            bridge_point,
        }
    }

    pub fn pending_sat(&self) -> u64 {
        self.htlcs.iter().map(|h| h.amount_sat).sum()
    }

    pub fn total_sat(&self) -> u64 {
        self.balance_iot_sat + self.balance_gateway_fees_sat + self.balance_bridge_sat
            + self.pending_sat()
    }

    pub fn check_conservation(&self, capacity_sat: u64) -> Result<(), TxError> {
        let actual = self.total_sat();
        if actual != capacity_sat {
            return Err(TxError::ConservationViolated {
                expected: capacity_sat,
                actual,
            });
        }
        Ok(())
    }

    fn next_id(&self) -> u64 {
        self.htlcs.iter().map(|h| h.id + 1).max().unwrap_or(0)
    }

    /// Next state after the IoT device pays `amount_sat`: the service fee
    /// moves to the gateway and the remainder is locked in a new HTLC.
    /// Points are carried over; the caller installs the next ones.
    pub fn with_payment(
        &self,
        params: &ChannelParams,
        amount_sat: u64,
        payment_hash: Digest,
        expiry_height: u32,
    ) -> Result<ChannelSnapshot, TxError> {
        if amount_sat > self.balance_iot_sat {
            return Err(TxError::InsufficientFunds {
                needed: amount_sat,
                available: self.balance_iot_sat,
            });
        }
        let fee = params.service_fee(amount_sat);
        if amount_sat <= fee {
            return Err(TxError::FeeUnderflow {
                amount: amount_sat,
                fee,
            });
        }
        let mut next = self.clone();
        next.state_index += 1;
        next.balance_iot_sat -= amount_sat;
        next.balance_gateway_fees_sat += fee;
        next.htlcs.push(Htlc {
            id: self.next_id(),
            amount_sat: amount_sat - fee,
            payment_hash,
            expiry_height,
        });
        Ok(next)
    }

    /// Pending HTLCs folded into the bridge balance, as if fulfilled.
    pub fn settled(&self) -> ChannelSnapshot {
        let mut next = self.clone();
        next.balance_bridge_sat += self.pending_sat();
        next.htlcs.clear();
        next
    }
}
