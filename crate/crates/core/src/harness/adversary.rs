//! Randomized adversaries: a gateway that injects, replays and reorders
//! messages towards the bridge, and a gateway that broadcasts revoked state.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crypto::{derive_keypair, Digest, KeyPair, PublicKey, Signature};
use crate::protocol::{
    BridgeState, Command, Effect, Event, GatewayState, Input, IotMessage, IotState, Message,
    PeerMessage, Phase, Role,
};
use crate::script::{HtlcTxKind, Side};
use crate::tx::{build_commitment_tx, build_htlc_tx, funding_sighash, sighash, ChannelSnapshot, Tx};

use super::{
    build_world, open_channel, run_scenario, toll_gate_node, CheatSpec, PaymentSpec, Report, ScenarioConfig,
    ScenarioError,
};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ForgeryOutcome {
    pub steps: usize,
    /// Commitments the bridge accepted, each revoking its previous one.
    pub revocations: usize,
    /// Inputs some role refused.
    pub rejected: usize,
    /// Revocations of a state whose successor the device never signed.
    pub violations: Vec<String>,
}

#[derive(Clone)]
struct Trace {
    iot: IotState,
    gateway: GatewayState,
    bridge: BridgeState,
    pool: Vec<(Role, Role, Message)>,
    signed: HashSet<Digest>,
    outsider: KeyPair,
    destination: PublicKey,
    /// Last forgery, reused while the bridge's pending state is unchanged.
    forged: Option<(ChannelSnapshot, Forgery)>,
    out: ForgeryOutcome,
}

#[derive(Clone)]
struct Forgery {
    digest: Digest,
    gateway_sig: Signature,
    gateway_htlc_sigs: Vec<Signature>,
}

impl Trace {
    fn deliver(&mut self, to: Role, input: Input) {
        let stepped = match to {
            Role::Iot => self.iot.step(&input).map(|(s, fx)| {
                self.iot = s;
                fx
            }),
            Role::Gateway => self.gateway.step(&input).map(|(s, fx)| {
                self.gateway = s;
                fx
            }),
            Role::Bridge => self.bridge.step(&input).map(|(s, fx)| {
                self.bridge = s;
                fx
            }),
        };
        let Ok(effects) = stepped else {
            self.out.rejected += 1;
            return;
        };
        for e in effects {
            match e {
                Effect::Send { to: dest, msg } => self.pool.push((to, dest, msg)),
                Effect::Event(Event::Signed { digest }) => {
                    self.signed.insert(digest);
                }
                Effect::Event(Event::Revoked { state_index }) => self.check_revocation(state_index),
                _ => {}
            }
        }
    }

    fn check_revocation(&mut self, state_index: u64) {
        self.out.revocations += 1;
        let params = self.bridge.params().expect("open").clone();
        let accepted = match self.bridge.latest_commitment() {
            Some(Ok(tx)) => tx,
            _ => {
                self.out
                    .violations
                    .push(format!("state {state_index} revoked with no signed successor"));
                return;
            }
        };
        let d = funding_sighash(&accepted, &params).expect("funding spend");
        if !self.signed.contains(&d) {
            self.out.violations.push(format!(
                "state {state_index} revoked for a commitment the device never signed"
            ));
        }
        if self.bridge.revocation_chain().revealed() != state_index + 1 {
            self.out
                .violations
                .push(format!("revocation of state {state_index} out of order"));
        }
    }

    /// Digests a bridge commitment for the pending state needs, and what the
    /// adversary can sign over them with gateway-held keys.
    fn forge(&mut self) -> Option<Forgery> {
        let next = self.bridge.pending()?;
        if let Some((snap, f)) = &self.forged {
            if snap == next {
                return Some(f.clone());
            }
        }
        let params = self.bridge.params()?;
        let funding = self.bridge.funding_outpoint()?;
        let c = build_commitment_tx(Side::Bridge, next, params, funding).ok()?;
        let digest = funding_sighash(&c.tx, params).ok()?;
        let htlc_digests: Vec<Digest> = c
            .htlc_vouts()
            .filter_map(|v| {
                let tx: Tx = build_htlc_tx(HtlcTxKind::Success, &c, v, params).ok()?;
                let out = &c.tx.outputs[v as usize];
                sighash(&tx, 0, &out.script, out.value).ok()
            })
            .collect();
        let gw = self.gateway.secrets();
        let f = Forgery {
            gateway_sig: gw.funding.sign(&digest),
            gateway_htlc_sigs: htlc_digests.iter().map(|h| gw.htlc.sign(h)).collect(),
            digest,
        };
        self.forged = Some((next.clone(), f.clone()));
        Some(f)
    }

    fn adversarial_message(&mut self, rng: &mut ChaCha8Rng) -> Option<(Role, Message)> {
        match rng.gen_range(0..7) {
            0 => {
                let amount = rng.gen_range(1_000..5_000_000u64);
                let fee = if rng.gen_bool(0.7) {
                    self.bridge.params()?.service_fee(amount)
                } else {
                    rng.gen_range(0..amount)
                };
                let net = amount - fee.min(amount);
                Some((
                    Role::Bridge,
                    PeerMessage::UpdateAddHtlc {
                        id: rng.gen_range(0..2),
                        amount_sat: net,
                        service_fee_sat: fee,
                        payment_hash: Digest::sha256(&rng.gen::<[u8; 32]>()),
                        expiry_height: rng.gen_range(0..1000),
                        destination: self.destination,
                    }
                    .into(),
                ))
            }
            1..=4 => {
                let f = self.forge()?;
                let sig_iot = match rng.gen_range(0..4) {
                    0 => None,
                    1 => Some(f.gateway_sig),
                    2 => Some(self.outsider.sign(&f.digest)),
                    // A genuine device signature over some other digest.
                    _ => {
                        let replayed: Vec<&Digest> = self.signed.iter().collect();
                        let other = replayed.choose(rng).copied().copied();
                        other.map(|r| self.iot.secrets().funding.sign(&r))
                    }
                };
                let htlc_sigs_iot = if rng.gen_bool(0.5) {
                    f.gateway_htlc_sigs.clone()
                } else {
                    Vec::new()
                };
                Some((
                    Role::Bridge,
                    PeerMessage::CommitmentSigned {
                        sig_iot,
                        signature: f.gateway_sig,
                        htlc_sigs_iot,
                        htlc_signatures: f.gateway_htlc_sigs,
                    }
                    .into(),
                ))
            }
            5 => {
                // Ask the device to sign a commitment that underpays it.
                let mut next = self.bridge.pending()?.clone();
                let cut = rng.gen_range(1..=next.balance_iot_sat.max(1));
                next.balance_iot_sat = next.balance_iot_sat.saturating_sub(cut);
                next.balance_bridge_sat += cut;
                let params = self.bridge.params()?;
                let c = build_commitment_tx(Side::Bridge, &next, params, self.bridge.funding_outpoint()?)
                    .ok()?;
                Some((
                    Role::Iot,
                    IotMessage::SignTxRequest {
                        commitment_tx: c.tx,
                        htlc_txs: Vec::new(),
                    }
                    .into(),
                ))
            }
            _ => Some((
                Role::Bridge,
                PeerMessage::RevokeAndAck {
                    secret: crate::protocol::CommitmentSecret(rng.gen()),
                    next_point: self.outsider.public,
                }
                .into(),
            )),
        }
    }
}

/// Channel state after opening, shared by every trace.
#[derive(Clone)]
pub struct ForgeryTemplate {
    iot: IotState,
    gateway: GatewayState,
    bridge: BridgeState,
    outsider: KeyPair,
    destination: PublicKey,
}

impl ForgeryTemplate {
    pub fn new() -> Result<ForgeryTemplate, ScenarioError> {
        let mut cfg = ScenarioConfig::reference();
        cfg.close = None;
        let mut w = build_world(&cfg, 0)?;
        open_channel(&mut w, cfg.capacity_sat)?;
        Ok(ForgeryTemplate {
            iot: w.iot,
            gateway: w.gateway,
            bridge: w.bridge,
            outsider: derive_keypair(b"outsider", "funding"),
            destination: toll_gate_node(),
        })
    }
}

/// One fuzzed execution: honest roles plus a gateway that interleaves
/// honest deliveries with forged, replayed and reordered messages.
pub fn run_forgery_trace(template: &ForgeryTemplate, seed: u64, steps: usize) -> ForgeryOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Trace {
        iot: template.iot.clone(),
        gateway: template.gateway.clone(),
        bridge: template.bridge.clone(),
        pool: Vec::new(),
        signed: HashSet::new(),
        outsider: template.outsider.clone(),
        destination: template.destination,
        forged: None,
        out: ForgeryOutcome::default(),
    };
    for _ in 0..steps {
        t.out.steps += 1;
        let roll = rng.gen_range(0..100);
        if roll < 40 && !t.pool.is_empty() {
            let i = rng.gen_range(0..t.pool.len());
            // Usually consumed, sometimes left behind for a later replay.
            let (from, to, msg) = if rng.gen_bool(0.8) {
                t.pool.swap_remove(i)
            } else {
                t.pool[i].clone()
            };
            t.deliver(to, Input::msg(from, msg));
        } else if roll < 55 {
            if t.iot.phase() == Phase::Operational && t.iot.pending_payment().is_none() {
                let amount = rng.gen_range(10_000..1_000_000);
                let destination = t.destination;
                t.deliver(
                    Role::Iot,
                    Input::Command(Command::Pay {
                        amount_sat: amount,
                        destination,
                    }),
                );
            }
        } else if roll < 60 {
            t.deliver(Role::Gateway, Input::Timeout);
        } else if let Some((to, msg)) = t.adversarial_message(&mut rng) {
            t.deliver(to, Input::msg(Role::Gateway, msg));
        }
    }
    t.out
}

#[derive(Clone, Debug, Serialize)]
pub struct CheatTrial {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub report: Report,
}

/// A random channel with 2 to 6 payments after which the gateway broadcasts
/// a random revoked state (never state 0, which holds no fees).
pub fn run_cheat_trial(seed: u64, watcher_enabled: bool) -> Result<CheatTrial, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let capacity = rng.gen_range(10_000_000..=500_000_000u64);
    let n = rng.gen_range(2..=6usize);
    let budget = capacity / (n as u64 + 1);
    let payments = (0..n)
        .map(|_| PaymentSpec {
            amount_sat: rng.gen_range(100_000..=budget),
            destination: None,
        })
        .collect();
    let cfg = ScenarioConfig {
        capacity_sat: capacity,
        payments,
        fee_rate_permille: rng.gen_range(1..=200),
        cheat: Some(CheatSpec {
            role: Role::Gateway,
            state_index: rng.gen_range(1..n as u64),
            watcher_enabled,
        }),
        close: None,
        ..ScenarioConfig::reference()
    };
    let report = run_scenario(&cfg, seed)?;
    Ok(CheatTrial {
        seed,
        config: cfg,
        report,
    })
}
