use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{revocation_secret, verify, Digest, PublicKey, Signature};
use crate::script::{multisig_witness, p2pk_witness, HtlcTxKind, Side};
use crate::tx::{
    build_closing_tx, build_commitment_tx, build_funding_tx, build_htlc_tx, funding_sighash,
    sighash, ChannelParams, ChannelSnapshot, CommitmentTx, FeePayer, FundingInput, IotKeys,
    NodeKeys, NodeSecrets, OutPoint, Tx, DEFAULT_CSV_DELAY, DEFAULT_FUNDING_DEPTH, FUNDING_VOUT,
};

use super::closing::{FeeNegotiator, Offer};
use super::{
    invalid, invoice, unexpected, ChainEvent, Command, CommitmentSecret, Effect, Event, Input,
    IotMessage, Message, PeerMessage, Phase, ProtocolError, RevocationChain, Role, StepError,
    StepResult, RevokedCommitment,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseMode {
    Mutual,
    Unilateral,
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub fee_rate_permille: u16,
    pub csv_delay: u16,
    pub funding_depth: u32,
    pub onchain_fee_sat: u64,
    pub close_mode: CloseMode,
    /// Opening closing-fee offer.
    pub closing_fee_sat: u64,
    /// Blocks between the current tip and an HTLC's expiry.
    pub htlc_expiry_delta: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            fee_rate_permille: 100,
            csv_delay: DEFAULT_CSV_DELAY,
            funding_depth: DEFAULT_FUNDING_DEPTH,
            onchain_fee_sat: 10_000,
            close_mode: CloseMode::Mutual,
            closing_fee_sat: 10_000,
            htlc_expiry_delta: 40,
        }
    }
}

#[derive(Clone, Debug)]
struct OwnCommitment {
    snapshot: ChannelSnapshot,
    bridge_sig: Signature,
}

#[derive(Clone, Debug)]
struct Closing {
    payer: FeePayer,
    negotiator: Option<FeeNegotiator>,
    /// Agreed fee and the bridge's signature for it.
    agreed: Option<(u64, Signature)>,
    /// Own commitment state being force-closed.
    unilateral: Option<u64>,
}

#[derive(Clone, Debug)]
struct Opening {
    capacity_sat: u64,
    iot: IotKeys,
    wallet: FundingInput,
    funding_tx: Option<Tx>,
    funding_witness: Option<Signature>,
    iot_sig: Option<Signature>,
}

/// The cloud gateway. It operates the channel against the bridge, but every
/// commitment the bridge accepts also needs the IoT device's signature.
#[derive(Clone, Debug)]
pub struct GatewayState {
    secrets: NodeSecrets,
    chain: RevocationChain,
    cfg: GatewayConfig,
    phase: Phase,
    opening: Option<Opening>,
    params: Option<ChannelParams>,
    funding_outpoint: Option<OutPoint>,
    funding_tx: Option<Tx>,
    snapshot: Option<ChannelSnapshot>,
    next: Option<ChannelSnapshot>,
    pending_amount: u64,
    bridge_next_point: Option<PublicKey>,
    got_revoke: bool,
    own: BTreeMap<u64, OwnCommitment>,
    revoked_bridge: Vec<RevokedCommitment>,
    locked_local: bool,
    locked_remote: bool,
    tip_height: u32,
    invoices: u64,
    closing: Option<Closing>,
}

impl GatewayState {
    pub fn new(secrets: NodeSecrets, revocation_seed: [u8; 32], cfg: GatewayConfig) -> Self {
        GatewayState {
            secrets,
            chain: RevocationChain::new(revocation_seed),
            cfg,
            phase: Phase::Idle,
            opening: None,
            params: None,
            funding_outpoint: None,
            funding_tx: None,
            snapshot: None,
            next: None,
            pending_amount: 0,
            bridge_next_point: None,
            got_revoke: false,
            own: BTreeMap::new(),
            revoked_bridge: Vec::new(),
            locked_local: false,
            locked_remote: false,
            tip_height: 0,
            invoices: 0,
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

    pub fn funding_outpoint(&self) -> Option<OutPoint> {
        self.funding_outpoint
    }

    pub fn funding_tx(&self) -> Option<&Tx> {
        self.funding_tx.as_ref()
    }

    pub fn revocation_chain(&self) -> &RevocationChain {
        &self.chain
    }

    /// Bridge commitments revoked so far, for the gateway's watcher.
    pub fn revoked_bridge_commitments(&self) -> &[RevokedCommitment] {
        &self.revoked_bridge
    }

    pub fn secrets(&self) -> &NodeSecrets {
        &self.secrets
    }

    pub fn step(&self, input: &Input) -> StepResult<GatewayState> {
        let mut next = self.clone();
        match next.apply(input) {
            Ok(effects) => Ok((next, effects)),
            Err(error) => Err(StepError {
                role: Role::Gateway,
                phase: self.phase,
                error,
            }),
        }
    }

    fn p(&self) -> &ChannelParams {
        self.params.as_ref().expect("params are set once the bridge accepted")
    }

    fn funding(&self) -> OutPoint {
        self.funding_outpoint.expect("funding outpoint is set once built")
    }

    fn current(&self) -> &ChannelSnapshot {
        self.snapshot.as_ref().expect("snapshot is set once built")
    }

    /// HTLC transactions of `c` (timeout on ours, success on the bridge's)
    /// and the digests each party signs for them.
    fn htlc_txs(&self, c: &CommitmentTx) -> Result<Vec<(Tx, Digest)>, ProtocolError> {
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

    fn apply(&mut self, input: &Input) -> Result<Vec<Effect>, ProtocolError> {
        let mut fx = Vec::new();
        let from = match input {
            Input::Message { from, .. } => Some(*from),
            _ => None,
        };
        let msg = match input {
            Input::Message { msg, .. } => Some(msg),
            _ => None,
        };
        match (self.phase, from, msg, input) {
            (
                Phase::Idle,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::OpenChannelRequest {
                    capacity_sat,
                    keys,
                    wallet,
                })),
                _,
            ) => {
                if *capacity_sat <= self.cfg.onchain_fee_sat {
                    return Err(invalid("capacity does not exceed the on-chain fee"));
                }
                self.opening = Some(Opening {
                    capacity_sat: *capacity_sat,
                    iot: *keys,
                    wallet: wallet.clone(),
                    funding_tx: None,
                    funding_witness: None,
                    iot_sig: None,
                });
                self.phase = Phase::Opening;
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::OpenChannel {
                        capacity_sat: *capacity_sat,
                        fee_rate_permille: self.cfg.fee_rate_permille,
                        csv_delay: self.cfg.csv_delay,
                        onchain_fee_sat: self.cfg.onchain_fee_sat,
                        funding_depth: self.cfg.funding_depth,
                        iot: *keys,
                        gateway: self.secrets.public(),
                        first_point: self.chain.point(0),
                    },
                ));
            }

            (
                Phase::Opening,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::AcceptChannel {
                    bridge,
                    first_point,
                })),
                _,
            ) => {
                let o = self.opening.clone().expect("set in Opening");
                let params = self.build_params(&o, bridge);
                params.validate()?;
                let funding = build_funding_tx(&o.wallet, &params, &o.iot.payment)?;
                let outpoint = funding.outpoint(FUNDING_VOUT);
                let s0 = ChannelSnapshot::initial(o.capacity_sat, self.chain.point(0), *first_point);
                let bridge_c0 = build_commitment_tx(Side::Bridge, &s0, &params, outpoint)?;
                self.params = Some(params.clone());
                self.funding_outpoint = Some(outpoint);
                self.snapshot = Some(s0);
                self.opening.as_mut().unwrap().funding_tx = Some(funding);
                self.phase = Phase::AwaitFundingSig;
                fx.push(Effect::send(
                    Role::Iot,
                    IotMessage::FundingSignatureRequest {
                        params,
                        wallet: o.wallet,
                        commitment_tx: bridge_c0.tx,
                    },
                ));
            }

            (
                Phase::AwaitFundingSig,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::FundingSigned {
                    signature,
                    funding_signature,
                })),
                _,
            ) if self.opening.as_ref().is_some_and(|o| o.iot_sig.is_none()) => {
                let o = self.opening.clone().unwrap();
                let bridge_c0 =
                    build_commitment_tx(Side::Bridge, self.current(), self.p(), self.funding())?;
                let d = funding_sighash(&bridge_c0.tx, self.p())?;
                if !verify(&signature.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot commitment"));
                }
                let funding_tx = o.funding_tx.clone().unwrap();
                let wallet_script = crate::script::p2pk_script(&o.iot.payment);
                let fd = sighash(&funding_tx, 0, &wallet_script, o.wallet.value_sat)?;
                if !verify(&funding_signature.0, &o.iot.payment.0, &fd) {
                    return Err(ProtocolError::InvalidSignature("iot funding"));
                }
                let op = self.opening.as_mut().unwrap();
                op.iot_sig = Some(*signature);
                op.funding_witness = Some(*funding_signature);
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::FundingCreated {
                        funding_outpoint: self.funding(),
                        sig_iot: *signature,
                        sig_gateway: self.secrets.funding.sign(&d),
                    },
                ));
            }

            (
                Phase::AwaitFundingSig,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::FundingSigned { signature })),
                _,
            ) if self.opening.as_ref().is_some_and(|o| o.iot_sig.is_some()) => {
                let s0 = self.current().clone();
                let own_c0 = build_commitment_tx(Side::Gateway, &s0, self.p(), self.funding())?;
                let d = funding_sighash(&own_c0.tx, self.p())?;
                if !verify(&signature.0, &self.p().bridge.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("bridge"));
                }
                self.own.insert(
                    0,
                    OwnCommitment {
                        snapshot: s0,
                        bridge_sig: *signature,
                    },
                );
                let o = self.opening.take().unwrap();
                let mut funding = o.funding_tx.unwrap();
                funding.witnesses[0] = p2pk_witness(&o.funding_witness.unwrap());
                self.funding_tx = Some(funding.clone());
                self.phase = Phase::AwaitFundingLocked;
                fx.push(Effect::Broadcast(funding));
            }

            (
                Phase::AwaitFundingLocked,
                _,
                _,
                Input::Chain(ChainEvent::Block {
                    height,
                    funding_confirmations,
                }),
            ) => {
                self.tip_height = *height;
                if !self.locked_local && *funding_confirmations >= self.p().funding_depth {
                    self.locked_local = true;
                    fx.push(Effect::send(
                        Role::Bridge,
                        PeerMessage::FundingLocked {
                            next_point: self.chain.point(1),
                        },
                    ));
                    self.maybe_operational(&mut fx);
                }
            }

            (
                Phase::AwaitFundingLocked,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::FundingLocked { next_point })),
                _,
            ) if !self.locked_remote => {
                self.locked_remote = true;
                self.bridge_next_point = Some(*next_point);
                self.maybe_operational(&mut fx);
            }

            (_, _, _, Input::Chain(ChainEvent::Block { height, .. })) => {
                self.tip_height = *height;
            }

            (
                Phase::Operational,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::SendPayment {
                    amount_sat,
                    destination,
                })),
                _,
            ) => {
                let fee = self.p().service_fee(*amount_sat);
                if *amount_sat <= fee {
                    return Err(ProtocolError::FeeUnderflow {
                        amount: *amount_sat,
                        fee,
                    });
                }
                let (_, hash) = invoice(destination, *amount_sat, self.invoices);
                self.invoices += 1;
                let expiry = self.tip_height + self.cfg.htlc_expiry_delta;
                let mut next = self
                    .current()
                    .settled()
                    .with_payment(self.p(), *amount_sat, hash, expiry)?;
                next.gateway_point = self.chain.point(next.state_index);
                next.bridge_point = self.bridge_next_point.expect("set by funding_locked");
                let htlc = next.htlcs.last().unwrap().clone();
                let bridge_c = build_commitment_tx(Side::Bridge, &next, self.p(), self.funding())?;
                let htlc_txs = self.htlc_txs(&bridge_c)?.into_iter().map(|(t, _)| t).collect();
                self.next = Some(next);
                self.pending_amount = *amount_sat;
                self.phase = Phase::AwaitIotSig;
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::UpdateAddHtlc {
                        id: htlc.id,
                        amount_sat: htlc.amount_sat,
                        service_fee_sat: fee,
                        payment_hash: hash,
                        expiry_height: expiry,
                        destination: *destination,
                    },
                ));
                fx.push(Effect::send(
                    Role::Iot,
                    IotMessage::SignTxRequest {
                        commitment_tx: bridge_c.tx,
                        htlc_txs,
                    },
                ));
            }

            (
                Phase::AwaitIotSig,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::TxSigned {
                    signature,
                    htlc_signatures,
                })),
                _,
            ) => {
                let next = self.next.clone().expect("set in AwaitIotSig");
                let bridge_c = build_commitment_tx(Side::Bridge, &next, self.p(), self.funding())?;
                let d = funding_sighash(&bridge_c.tx, self.p())?;
                if !verify(&signature.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot"));
                }
                let htlcs = self.htlc_txs(&bridge_c)?;
                check_sigs(htlc_signatures, &htlcs, &self.p().iot.htlc, "iot htlc")?;
                let htlc_own = htlcs.iter().map(|(_, hd)| self.secrets.htlc.sign(hd)).collect();
                self.phase = Phase::AwaitRevokeAck;
                self.got_revoke = false;
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::CommitmentSigned {
                        sig_iot: Some(*signature),
                        signature: self.secrets.funding.sign(&d),
                        htlc_sigs_iot: htlc_signatures.clone(),
                        htlc_signatures: htlc_own,
                    },
                ));
            }

            (
                Phase::AwaitRevokeAck,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::RevokeAndAck { secret, next_point })),
                _,
            ) if !self.got_revoke => {
                let cur = self.current().clone();
                self.record_bridge_revocation(&cur, secret)?;
                self.bridge_next_point = Some(*next_point);
                self.got_revoke = true;
            }

            (
                Phase::AwaitRevokeAck,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::CommitmentSigned {
                    signature,
                    htlc_signatures,
                    ..
                })),
                _,
            ) if self.got_revoke => {
                let next = self.next.clone().expect("set in AwaitRevokeAck");
                let own_c = build_commitment_tx(Side::Gateway, &next, self.p(), self.funding())?;
                let d = funding_sighash(&own_c.tx, self.p())?;
                if !verify(&signature.0, &self.p().bridge.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("bridge"));
                }
                let htlcs = self.htlc_txs(&own_c)?;
                check_sigs(htlc_signatures, &htlcs, &self.p().bridge.htlc, "bridge htlc")?;
                let i = self.current().state_index;
                let secret = self
                    .chain
                    .reveal(i)
                    .map_err(|e| invalid(e.to_string()))?;
                self.own.insert(
                    next.state_index,
                    OwnCommitment {
                        snapshot: next.clone(),
                        bridge_sig: *signature,
                    },
                );
                self.snapshot = Some(next);
                self.next = None;
                self.phase = Phase::Operational;
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::RevokeAndAck {
                        secret,
                        next_point: self.chain.point(i + 2),
                    },
                ));
                fx.push(Effect::send(Role::Iot, IotMessage::PaymentSuccess));
                fx.push(Effect::Event(Event::PaymentCompleted {
                    amount_sat: self.pending_amount,
                }));
            }

            (
                Phase::AwaitFundingLocked | Phase::AwaitIotSig | Phase::AwaitRevokeAck,
                _,
                _,
                Input::Timeout,
            ) => {
                fx.push(Effect::Event(Event::BridgeUnresponsive));
                let latest = *self.own.keys().last().ok_or(ProtocolError::BridgeUnresponsive)?;
                self.next = None;
                self.start_unilateral(latest, FeePayer::Iot, &mut fx)?;
            }

            (
                Phase::Operational,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::ChannelClosingRequest)),
                _,
            ) => {
                self.begin_close(FeePayer::Iot, &mut fx)?;
            }

            (Phase::Operational, _, _, Input::Command(Command::Close)) => {
                let balance = self.current().balance_gateway_fees_sat;
                let fee = self.cfg.closing_fee_sat;
                if balance == 0 || balance < fee {
                    return Err(ProtocolError::InsufficientBalanceForFee { balance, fee });
                }
                fx.push(Effect::send(Role::Iot, IotMessage::ChannelClosingRequest));
                self.begin_close(FeePayer::Gateway, &mut fx)?;
            }

            (Phase::Operational, _, _, Input::Command(Command::BroadcastRevoked { state_index })) => {
                if *state_index >= self.current().state_index || !self.own.contains_key(state_index)
                {
                    return Err(invalid(format!("state {state_index} is not a revoked state")));
                }
                self.start_unilateral(*state_index, FeePayer::Iot, &mut fx)?;
            }

            (
                Phase::Closing,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::Shutdown { .. })),
                _,
            ) if self.closing.as_ref().is_some_and(|c| c.negotiator.is_none() && c.unilateral.is_none()) => {
                let settled = self.current().settled();
                let payer = self.closing.as_ref().unwrap().payer;
                let max = payer_balance(&settled, payer);
                let mut n = FeeNegotiator::new(self.cfg.closing_fee_sat, 0, max);
                let fee = n.opening_offer();
                self.closing.as_mut().unwrap().negotiator = Some(n);
                let sig = self.closing_sig(fee)?;
                fx.push(Effect::send(
                    Role::Bridge,
                    PeerMessage::ClosingSigned {
                        fee_sat: fee,
                        signature: sig,
                    },
                ));
            }

            (
                Phase::Closing,
                Some(Role::Bridge),
                Some(Message::Peer(PeerMessage::ClosingSigned { fee_sat, signature })),
                _,
            ) if self.closing.as_ref().is_some_and(|c| c.negotiator.is_some() && c.agreed.is_none()) => {
                let tx = self.closing_tx(*fee_sat)?;
                let d = funding_sighash(&tx, self.p())?;
                if !verify(&signature.0, &self.p().bridge.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("bridge closing"));
                }
                let c = self.closing.as_mut().unwrap();
                let offer = c.negotiator.as_mut().unwrap().respond(*fee_sat)?;
                match offer {
                    Offer::Counter(fee) => {
                        let sig = self.closing_sig(fee)?;
                        fx.push(Effect::send(
                            Role::Bridge,
                            PeerMessage::ClosingSigned {
                                fee_sat: fee,
                                signature: sig,
                            },
                        ));
                    }
                    Offer::Accept(fee) | Offer::Agreed(fee) => {
                        if matches!(offer, Offer::Accept(_)) {
                            let sig = self.closing_sig(fee)?;
                            fx.push(Effect::send(
                                Role::Bridge,
                                PeerMessage::ClosingSigned {
                                    fee_sat: fee,
                                    signature: sig,
                                },
                            ));
                        }
                        self.closing.as_mut().unwrap().agreed = Some((fee, *signature));
                        fx.push(Effect::Event(Event::ClosingFeeAgreed { fee_sat: fee }));
                        fx.push(Effect::send(Role::Iot, IotMessage::ClosingTxRequest { closing_tx: tx }));
                    }
                }
            }

            (
                Phase::Closing,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::ClosingTxSigned { signature })),
                _,
            ) if self.closing.as_ref().is_some_and(|c| c.agreed.is_some()) => {
                let (fee, bridge_sig) = self.closing.as_ref().unwrap().agreed.unwrap();
                let mut tx = self.closing_tx(fee)?;
                let d = funding_sighash(&tx, self.p())?;
                if !verify(&signature.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot closing"));
                }
                tx.witnesses[0] = self.funding_witness(*signature, self.secrets.funding.sign(&d), bridge_sig);
                self.finish_close(tx, &mut fx);
            }

            (
                Phase::Closing,
                Some(Role::Iot),
                Some(Message::Iot(IotMessage::TxSigned { signature, .. })),
                _,
            ) if self.closing.as_ref().is_some_and(|c| c.unilateral.is_some()) => {
                let state = self.closing.as_ref().unwrap().unilateral.unwrap();
                let own = self.own[&state].clone();
                let c = build_commitment_tx(Side::Gateway, &own.snapshot, self.p(), self.funding())?;
                let d = funding_sighash(&c.tx, self.p())?;
                if !verify(&signature.0, &self.p().iot.funding.0, &d) {
                    return Err(ProtocolError::InvalidSignature("iot"));
                }
                let mut tx = c.tx;
                tx.witnesses[0] =
                    self.funding_witness(*signature, self.secrets.funding.sign(&d), own.bridge_sig);
                self.finish_close(tx, &mut fx);
            }

            (phase, _, _, Input::Chain(ChainEvent::FundingSpent { .. }))
                if phase != Phase::Closed && phase != Phase::Idle =>
            {
                self.phase = Phase::Closed;
                fx.push(Effect::send(Role::Iot, IotMessage::ChannelClosed));
                fx.push(Effect::Event(Event::ChannelClosed));
            }

            _ => return Err(unexpected(input)),
        }
        Ok(fx)
    }

    fn build_params(&self, o: &Opening, bridge: &NodeKeys) -> ChannelParams {
        ChannelParams {
            capacity_sat: o.capacity_sat,
            iot: o.iot,
            gateway: self.secrets.public(),
            bridge: *bridge,
            csv_delay: self.cfg.csv_delay,
            fee_rate_permille: self.cfg.fee_rate_permille,
            onchain_fee_sat: self.cfg.onchain_fee_sat,
            funding_depth: self.cfg.funding_depth,
        }
    }

    fn maybe_operational(&mut self, fx: &mut Vec<Effect>) {
        if self.locked_local && self.locked_remote {
            self.phase = Phase::Operational;
            fx.push(Effect::Event(Event::ChannelOperational));
        }
    }

    fn record_bridge_revocation(
        &mut self,
        cur: &ChannelSnapshot,
        secret: &CommitmentSecret,
    ) -> Result<(), ProtocolError> {
        if !secret.matches(&cur.bridge_point) {
            return Err(invalid(format!(
                "revocation secret does not match state {}",
                cur.state_index
            )));
        }
        let revoked = build_commitment_tx(Side::Bridge, cur, self.p(), self.funding())?;
        let key = revocation_secret(&self.secrets.revocation_base.secret, &secret.to_key().unwrap())
            .map_err(|e| invalid(e.to_string()))?;
        self.revoked_bridge.push(RevokedCommitment {
            commitment: revoked,
            revocation_key: key,
        });
        Ok(())
    }

    fn begin_close(&mut self, payer: FeePayer, fx: &mut Vec<Effect>) -> Result<(), ProtocolError> {
        match self.cfg.close_mode {
            CloseMode::Mutual => {
                self.closing = Some(Closing {
                    payer,
                    negotiator: None,
                    agreed: None,
                    unilateral: None,
                });
                self.phase = Phase::Closing;
                fx.push(Effect::send(Role::Bridge, PeerMessage::Shutdown { fee_payer: payer }));
                Ok(())
            }
            CloseMode::Unilateral => {
                let latest = self.current().state_index;
                self.start_unilateral(latest, payer, fx)
            }
        }
    }

    fn start_unilateral(
        &mut self,
        state: u64,
        payer: FeePayer,
        fx: &mut Vec<Effect>,
    ) -> Result<(), ProtocolError> {
        let own = self.own[&state].clone();
        let c = build_commitment_tx(Side::Gateway, &own.snapshot, self.p(), self.funding())?;
        let htlc_txs = self.htlc_txs(&c)?.into_iter().map(|(t, _)| t).collect();
        self.closing = Some(Closing {
            payer,
            negotiator: None,
            agreed: None,
            unilateral: Some(state),
        });
        self.phase = Phase::Closing;
        fx.push(Effect::send(
            Role::Iot,
            IotMessage::SignTxRequest {
                commitment_tx: c.tx,
                htlc_txs,
            },
        ));
        Ok(())
    }

    fn closing_tx(&self, fee: u64) -> Result<Tx, ProtocolError> {
        let payer = self.closing.as_ref().expect("closing").payer;
        Ok(build_closing_tx(&self.current().settled(), self.p(), self.funding(), fee, payer)?)
    }

    fn closing_sig(&self, fee: u64) -> Result<Signature, ProtocolError> {
        let d = funding_sighash(&self.closing_tx(fee)?, self.p())?;
        Ok(self.secrets.funding.sign(&d))
    }

    fn funding_witness(
        &self,
        iot: Signature,
        own: Signature,
        bridge: Signature,
    ) -> crate::script::Witness {
        let p = self.p();
        multisig_witness(vec![
            (p.iot.funding, iot),
            (p.gateway.funding, own),
            (p.bridge.funding, bridge),
        ])
    }

    fn finish_close(&mut self, tx: Tx, fx: &mut Vec<Effect>) {
        self.phase = Phase::Closed;
        fx.push(Effect::Broadcast(tx));
        fx.push(Effect::send(Role::Iot, IotMessage::ChannelClosed));
        fx.push(Effect::Event(Event::ChannelClosed));
    }
}

fn payer_balance(s: &ChannelSnapshot, payer: FeePayer) -> u64 {
    match payer {
        FeePayer::Iot => s.balance_iot_sat,
        FeePayer::Gateway => s.balance_gateway_fees_sat,
    }
}

pub(super) fn check_sigs(
    sigs: &[Signature],
    htlcs: &[(Tx, Digest)],
    key: &PublicKey,
    what: &'static str,
) -> Result<(), ProtocolError> {
    if sigs.len() != htlcs.len() {
        return Err(invalid(format!(
            "{} {what} signatures for {} HTLC transactions",
            sigs.len(),
            htlcs.len()
        )));
    }
    for (s, (_, d)) in sigs.iter().zip(htlcs) {
        if !verify(&s.0, &key.0, d) {
            return Err(ProtocolError::InvalidSignature(what));
        }
    }
    Ok(())
}
