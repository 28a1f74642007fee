#![allow(dead_code)]

use iotln::crypto::{derive_keypair, revocation_secret, Digest, KeyPair, SecretKey};
use iotln::tx::{
    build_commitment_txs, ChannelParams, ChannelSnapshot, CommitmentTx, IotSecrets, NodeSecrets,
    OutPoint, COIN, DEFAULT_CSV_DELAY, DEFAULT_FUNDING_DEPTH,
};

/// Every secret of a channel in one place, so tests can sign for any party.
pub struct Fixture {
    pub iot: IotSecrets,
    pub gw: NodeSecrets,
    pub br: NodeSecrets,
    pub params: ChannelParams,
    pub funding: OutPoint,
}

pub const PREIMAGE: [u8; 32] = [0x42; 32];

pub fn payment_hash() -> Digest {
    Digest::sha256(&PREIMAGE)
}

impl Fixture {
    pub fn new(capacity: u64, permille: u16) -> Fixture {
        let iot = IotSecrets::derive(b"iot");
        let gw = NodeSecrets::derive(b"gateway", "gateway");
        let br = NodeSecrets::derive(b"bridge", "bridge");
        let params = ChannelParams {
            capacity_sat: capacity,
            iot: iot.public(),
            gateway: gw.public(),
            bridge: br.public(),
            csv_delay: DEFAULT_CSV_DELAY,
            fee_rate_permille: permille,
            onchain_fee_sat: 10_000,
            funding_depth: DEFAULT_FUNDING_DEPTH,
        };
        Fixture {
            iot,
            gw,
            br,
            params,
            funding: OutPoint::new(Digest::sha256(b"funding"), 0),
        }
    }

    /// 5 BTC channel with a 10% service fee.
    pub fn reference() -> Fixture {
        Fixture::new(5 * COIN, 100)
    }

    pub fn gw_point_secret(&self, i: u64) -> KeyPair {
        derive_keypair(b"gateway-points", &i.to_string())
    }

    pub fn br_point_secret(&self, i: u64) -> KeyPair {
        derive_keypair(b"bridge-points", &i.to_string())
    }

    pub fn initial(&self) -> ChannelSnapshot {
        ChannelSnapshot::initial(
            self.params.capacity_sat,
            self.gw_point_secret(0).public,
            self.br_point_secret(0).public,
        )
    }

    /// State after paying `amount` from `prev`, with fresh per-commitment points.
    pub fn pay(&self, prev: &ChannelSnapshot, amount: u64) -> ChannelSnapshot {
        let mut s = prev
            .with_payment(&self.params, amount, payment_hash(), 500)
            .unwrap();
        s.gateway_point = self.gw_point_secret(s.state_index).public;
        s.bridge_point = self.br_point_secret(s.state_index).public;
        s
    }

    pub fn commitments(&self, s: &ChannelSnapshot) -> (CommitmentTx, CommitmentTx) {
        build_commitment_txs(s, &self.params, self.funding).unwrap()
    }

    /// Secret the bridge can compute once the gateway revoked state `i`.
    pub fn gateway_revocation_secret(&self, i: u64) -> SecretKey {
        revocation_secret(&self.br.revocation_base.secret, &self.gw_point_secret(i).secret).unwrap()
    }

    pub fn bridge_revocation_secret(&self, i: u64) -> SecretKey {
        revocation_secret(&self.gw.revocation_base.secret, &self.br_point_secret(i).secret).unwrap()
    }
}
