use std::collections::BTreeMap;

use crate::crypto::{revocation_secret, verify, PublicKey, Signature};
use crate::script::{multisig_witness, HtlcTxKind, Side};
use crate::tx::{
    build_closing_tx, build_commitment_tx, build_htlc_tx, funding_sighash, sighash, ChannelParams,
    ChannelSnapshot, CommitmentTx, FeePayer, NodeSecrets, OutPoint, Tx,
};

use super::closing::{FeeNegotiator, Offer};
use super::gateway::check_sigs;
use super::{
    invalid, unexpected, ChainEvent, Command, Effect, Event, Input, Message, PeerMessage, Phase,
    ProtocolError, RevocationChain, RevokedCommitment, Role, StepError, StepResult,
};

#[derive(Clone, Debug)]
pub struct BridgeConfig {
    /// Closing fee the bridge proposes when negotiating.
    pub closing_fee_sat: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            closing_fee_sat: 10_000,
        }
    }
}

/// Counterparty signatures on one of the bridge's own commitments.
#[derive(Clone, Debug)]
struct Signed {
    snapshot: ChannelSnapshot,
    sig_iot: Signature,
    sig_gateway: Signature,
}

#[derive(Clone, Debug)]
struct Closing {
    payer: FeePayer,
    negotiator: Option<FeeNegotiator>,
    agreed: Option<u64>,
}

/// The bridge node: a regular Lightning peer that additionally insists on the
/// IoT device's signature before it revokes a commitment.
#[derive(Clone, Debug)]
pub struct BridgeState {
    secrets: NodeSecrets,
    chain: RevocationChain,
    cfg: BridgeConfig,
    phase: Phase,
    params: Option<ChannelParams>,
    gateway_first_point: Option<PublicKey>,
    funding_outpoint: Option<OutPoint>,
    snapshot: Option<ChannelSnapshot>,
    next: Option<ChannelSnapshot>,
    gateway_next_point: Option<PublicKey>,
    /// Own commitments the bridge holds full signatures for, by state.
    history: BTreeMap<u64, Signed>,
    revoked_gateway: Vec<RevokedCommitment>,
    locked_local: bool,
    locked_remote: bool,
    closing: Option<Closing>,
}

impl BridgeState {
    pub fn new(secrets: NodeSecrets, revocation_seed: [u8; 32], cfg: BridgeConfig) -> Self {
        BridgeState {
            secrets,
            chain: RevocationChain::new(revocation_seed),
            cfg,
            phase: Phase::Idle,
            params: None,
            gateway_first_point: None,
            funding_outpoint: None,
            snapshot: None,
            next: None,
            gateway_next_point: None,
            history: BTreeMap::new(),
            revoked_gateway: Vec::new(),
            locked_local: false,
            locked_remote: false,
            closing: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn params(&self) -> Option<&ChannelParams> {
        self.params.as_ref()
    }

    pub fn snapshot(&self) -> Option<&ChannelSnapshot> {
        self.snapshot.as_ref()
    }

    /// State proposed by the last accepted update_add_htlc, awaiting
    /// signatures.
    pub fn pending(&self) -> Option<&ChannelSnapshot> {
        self.next.as_ref()
    }

    pub fn funding_outpoint(&self) -> Option<OutPoint> {
        self.funding_outpoint
    }

    pub fn secrets(&self) -> &NodeSecrets {
        &self.secrets
    }

    pub fn revocation_chain(&self) -> &RevocationChain {
        &self.chain
    }

    /// Gateway commitments revoked so far, with the keys to punish them.
    pub fn revoked_gateway_commitments(&self) -> &[RevokedCommitment] {
        &self.revoked_gateway
    }

    /// The bridge's latest commitment with a complete funding witness.
    pub fn latest_commitment(&self) -> Option<Result<Tx, ProtocolError>> {
        self.history.values().last().map(|s| self.signed_commitment(s))
    }

    pub fn step(&self, input: &Input) -> StepResult<BridgeState> {
        let mut next = self.clone();
        match next.apply(input) {
            Ok(effects) => Ok((next, effects)),
            Err(error) => Err(StepError {
                role: Role::Bridge,
                phase: self.phase,
                error,
            }),
        }
    }

    fn p(&self) -> &ChannelParams {
        self.params.as_ref().expect("params are set once the channel was offered")
    }

    fn funding(&self) -> OutPoint {
        self.funding_outpoint.expect("funding outpoint is set by funding_created")
    }

    fn current(&self) -> &ChannelSnapshot {
        self.snapshot.as_ref().expect("snapshot is set by funding_created")
    }

    fn signed_commitment(&self, s: &Signed) -> Result<Tx, ProtocolError> {
        let p = self.p();
        let c = build_commitment_tx(Side::Bridge, &s.snapshot, p, self.funding())?;
        let d = funding_sighash(&c.tx, p)?;
        let mut tx = c.tx;
        tx.witnesses[0] = multisig_witness(vec![
            (p.iot.funding, s.sig_iot),
            (p.gateway.funding, s.sig_gateway),
            (p.bridge.funding, self.secrets.funding.sign(&d)),
        ]);
        Ok(tx)
    }

    fn htlc_digests(&self, c: &CommitmentTx) -> Result<Vec<(Tx, crate::crypto::Digest)>, ProtocolError> {
        let kind = match c.side {
            Side::Gateway => HtlcTxKind::Timeout,
            Side::Bridge => HtlcTxKind::Success,
        };
        c.htlc_vouts()
            .map(|v| {
                let tx = build_htlc_tx(kind, c, v, self.p())?;
                let out = &c.tx.outputs[v as usize];
                let d = sighash(&tx, 0, &out.script, out.value)?;
                Ok((tx, d))
            })
            .collect()
    }

    fn closing_tx(&self, fee: u64) -> Result<Tx, ProtocolError> {
        let payer = self.closing.as_ref().expect("closing").payer;
        Ok(build_closing_tx(&self.current().settled(), self.p(), self.funding(), fee, payer)?)
    }

    fn apply(&mut self, input: &Input) -> Result<Vec<Effect>, ProtocolError> {
        let mut fx = Vec::new();
        let peer = match input {
            Input::Message {
                from: Role::Gateway,
                msg: Message::Peer(m),
            } => Some(m),
            _ => None,
        };
        match (self.phase, peer, input) {
            (
                Phase::Idle,
                Some(PeerMessage::OpenChannel {
                    capacity_sat,
                    fee_rate_permille,
                    csv_delay,
                    onchain_fee_sat,
                    funding_depth,
                    iot,
                    gateway,
                    first_point,
                }),
                _,
            ) => {
                let params = ChannelParams {
                    capacity_sat: *capacity_sat,
                    iot: *iot,
                    gateway: *gateway,
                    bridge: self.secrets.public(),
                    csv_delay: *csv_delay,
                    fee_rate_permille: *fee_rate_permille,
                    onchain_fee_sat: *onchain_fee_sat,
                    funding_depth: *funding_depth,
                };
                params.validate()?;
                self.params = Some(params);
                self.gateway_first_point = Some(*first_point);
                self.phase = Phase::AwaitFundingSig;
                fx.push(Effect::send(
                    Role::Gateway,
                    PeerMessage::AcceptChannel {
                        bridge: self.secrets.public(),
                        first_point: self.chain.point(0),
                    },
                ));
            }

            (
                Phase::AwaitFundingSig,
                Some(PeerMessage::FundingCreated {
                    funding_outpoint,
                    sig_iot,
                    sig_gateway,
                }),
                _,
            ) => {
                let s0 = ChannelSnapshot::initial(
                    self.p().capacity_sat,
                    self.gateway_first_point.expect("set by open_channel"),
                    self.chain.point(0),
                );
                let own = build_commitment_tx(Side::Bridge, &s0, self.p(), *funding_outpoint)?;
                let d = funding_sighash(&own.tx, self.p())?;
                if !verify(&sig_iot.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot"));
                }
                if !verify(&sig_gateway.0, &self.p().gateway.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("gateway"));
                }
                let theirs = build_commitment_tx(Side::Gateway, &s0, self.p(), *funding_outpoint)?;
                let gd = funding_sighash(&theirs.tx, self.p())?;
                self.funding_outpoint = Some(*funding_outpoint);
                self.history.insert(
                    0,
                    Signed {
                        snapshot: s0.clone(),
                        sig_iot: *sig_iot,
                        sig_gateway: *sig_gateway,
                    },
                );
                self.snapshot = Some(s0);
                self.phase = Phase::AwaitFundingLocked;
                fx.push(Effect::send(
                    Role::Gateway,
                    PeerMessage::FundingSigned {
                        signature: self.secrets.funding.sign(&gd),
                    },
                ));
            }

            (
                Phase::AwaitFundingLocked,
                _,
                Input::Chain(ChainEvent::Block {
                    funding_confirmations,
                    ..
                }),
            ) => {
                if !self.locked_local && *funding_confirmations >= self.p().funding_depth {
                    self.locked_local = true;
                    fx.push(Effect::send(
                        Role::Gateway,
                        PeerMessage::FundingLocked {
                            next_point: self.chain.point(1),
                        },
                    ));
                    self.maybe_operational(&mut fx);
                }
            }

            (Phase::AwaitFundingLocked, Some(PeerMessage::FundingLocked { next_point }), _)
                if !self.locked_remote =>
            {
                self.locked_remote = true;
                self.gateway_next_point = Some(*next_point);
                self.maybe_operational(&mut fx);
            }

            (_, _, Input::Chain(ChainEvent::Block { .. })) => {}

            (
                Phase::Operational,
                Some(PeerMessage::UpdateAddHtlc {
                    id,
                    amount_sat,
                    service_fee_sat,
                    payment_hash,
                    expiry_height,
                    ..
                }),
                _,
            ) => {
                let gross = amount_sat
                    .checked_add(*service_fee_sat)
                    .ok_or_else(|| invalid("HTLC amount overflows"))?;
                let fee = self.p().service_fee(gross);
                if fee != *service_fee_sat {
                    return Err(invalid(format!(
                        "service fee {service_fee_sat} sat, expected {fee} sat for {gross} sat"
                    )));
                }
                let settled = self.current().settled();
                let mut next = settled.with_payment(self.p(), gross, *payment_hash, *expiry_height)?;
                let htlc = next.htlcs.last().expect("with_payment adds an HTLC");
                if htlc.id != *id || htlc.amount_sat != *amount_sat {
                    return Err(invalid(format!("unexpected HTLC id {id}")));
                }
                next.gateway_point = self.gateway_next_point.expect("set by funding_locked");
                next.bridge_point = self.chain.point(next.state_index);
                self.next = Some(next);
                self.phase = Phase::AwaitIotSig;
            }

            (
                Phase::AwaitIotSig,
                Some(PeerMessage::CommitmentSigned {
                    sig_iot,
                    signature,
                    htlc_sigs_iot,
                    htlc_signatures,
                }),
                _,
            ) => {
                let sig_iot = sig_iot.ok_or(ProtocolError::MissingIotSignature)?;
                let next = self.next.clone().expect("set in AwaitIotSig");
                let own = build_commitment_tx(Side::Bridge, &next, self.p(), self.funding())?;
                let d = funding_sighash(&own.tx, self.p())?;
                if !verify(&sig_iot.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot"));
                }
                if !verify(&signature.0, &self.p().gateway.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("gateway"));
                }
                let htlcs = self.htlc_digests(&own)?;
                check_sigs(htlc_sigs_iot, &htlcs, &self.p().iot.htlc, "iot htlc")?;
                check_sigs(htlc_signatures, &htlcs, &self.p().gateway.htlc, "gateway htlc")?;

                let i = self.current().state_index;
                let secret = self.chain.reveal(i).map_err(|e| invalid(e.to_string()))?;
                let theirs = build_commitment_tx(Side::Gateway, &next, self.p(), self.funding())?;
                let gd = funding_sighash(&theirs.tx, self.p())?;
                let timeout_sigs = self
                    .htlc_digests(&theirs)?
                    .iter()
                    .map(|(_, hd)| self.secrets.htlc.sign(hd))
                    .collect();
                self.history.insert(
                    next.state_index,
                    Signed {
                        snapshot: next,
                        sig_iot,
                        sig_gateway: *signature,
                    },
                );
                self.phase = Phase::AwaitRevokeAck;
                fx.push(Effect::send(
                    Role::Gateway,
                    PeerMessage::RevokeAndAck {
                        secret,
                        next_point: self.chain.point(i + 2),
                    },
                ));
                fx.push(Effect::Event(Event::Revoked { state_index: i }));
                fx.push(Effect::send(
                    Role::Gateway,
                    PeerMessage::CommitmentSigned {
                        sig_iot: None,
                        signature: self.secrets.funding.sign(&gd),
                        htlc_sigs_iot: Vec::new(),
                        htlc_signatures: timeout_sigs,
                    },
                ));
            }

            (Phase::AwaitRevokeAck, Some(PeerMessage::RevokeAndAck { secret, next_point }), _) => {
                let cur = self.current().clone();
                if !secret.matches(&cur.gateway_point) {
                    return Err(invalid(format!(
                        "revocation secret does not match state {}",
                        cur.state_index
                    )));
                }
                let revoked = build_commitment_tx(Side::Gateway, &cur, self.p(), self.funding())?;
                let key = revocation_secret(
                    &self.secrets.revocation_base.secret,
                    &secret.to_key().expect("matched a point"),
                )
                .map_err(|e| invalid(e.to_string()))?;
                self.revoked_gateway.push(RevokedCommitment {
                    commitment: revoked,
                    revocation_key: key,
                });
                self.gateway_next_point = Some(*next_point);
                self.snapshot = self.next.take();
                self.phase = Phase::Operational;
            }

            (Phase::AwaitIotSig, _, Input::Timeout) => {
                self.next = None;
                self.phase = Phase::Operational;
            }

            (Phase::Operational, Some(PeerMessage::Shutdown { fee_payer }), _) => {
                self.closing = Some(Closing {
                    payer: *fee_payer,
                    negotiator: None,
                    agreed: None,
                });
                self.phase = Phase::Closing;
                fx.push(Effect::send(
                    Role::Gateway,
                    PeerMessage::Shutdown {
                        fee_payer: *fee_payer,
                    },
                ));
            }

            (Phase::Closing, Some(PeerMessage::ClosingSigned { fee_sat, signature }), _)
                if self.closing.as_ref().is_some_and(|c| c.agreed.is_none()) =>
            {
                let tx = self.closing_tx(*fee_sat)?;
                let d = funding_sighash(&tx, self.p())?;
                if !verify(&signature.0, &self.p().gateway.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("gateway closing"));
                }
                if self.closing.as_ref().unwrap().negotiator.is_none() {
                    let settled = self.current().settled();
                    let max = match self.closing.as_ref().unwrap().payer {
                        FeePayer::Iot => settled.balance_iot_sat,
                        FeePayer::Gateway => settled.balance_gateway_fees_sat,
                    };
                    self.closing.as_mut().unwrap().negotiator =
                        Some(FeeNegotiator::new(self.cfg.closing_fee_sat, 0, max));
                }
                let c = self.closing.as_mut().unwrap();
                let offer = c.negotiator.as_mut().unwrap().respond(*fee_sat)?;
                let reply = match offer {
                    Offer::Counter(fee) | Offer::Accept(fee) => Some(fee),
                    Offer::Agreed(_) => None,
                };
                if let Offer::Accept(fee) | Offer::Agreed(fee) = offer {
                    c.agreed = Some(fee);
                    fx.push(Effect::Event(Event::ClosingFeeAgreed { fee_sat: fee }));
                }
                if let Some(fee) = reply {
                    let d = funding_sighash(&self.closing_tx(fee)?, self.p())?;
                    fx.push(Effect::send(
                        Role::Gateway,
                        PeerMessage::ClosingSigned {
                            fee_sat: fee,
                            signature: self.secrets.funding.sign(&d),
                        },
                    ));
                }
            }

            (phase, _, Input::Command(Command::ForceClose))
                if phase != Phase::Closed && !self.history.is_empty() =>
            {
                let tx = self.signed_commitment(self.history.values().last().unwrap())?;
                self.phase = Phase::Closed;
                fx.push(Effect::Broadcast(tx));
                fx.push(Effect::Event(Event::ChannelClosed));
            }

            (Phase::Operational, _, Input::Command(Command::BroadcastRevoked { state_index })) => {
                if *state_index >= self.current().state_index {
                    return Err(invalid(format!("state {state_index} is not a revoked state")));
                }
                let s = self
                    .history
                    .get(state_index)
                    .ok_or_else(|| invalid(format!("no signatures for state {state_index}")))?;
                let tx = self.signed_commitment(s)?;
                self.phase = Phase::Closed;
                fx.push(Effect::Broadcast(tx));
                fx.push(Effect::Event(Event::ChannelClosed));
            }

            (phase, _, Input::Chain(ChainEvent::FundingSpent { .. }))
                if phase != Phase::Closed && phase != Phase::Idle =>
            {
                self.phase = Phase::Closed;
                fx.push(Effect::Event(Event::ChannelClosed));
            }

            _ => return Err(unexpected(input)),
        }
        Ok(fx)
    }

    fn maybe_operational(&mut self, fx: &mut Vec<Effect>) {
        if self.locked_local && self.locked_remote {
            self.phase = Phase::Operational;
            fx.push(Effect::Event(Event::ChannelOperational));
        }
    }
}
