//! Scenario runner: wires the roles, the chain and the network model into
//! end-to-end runs and audits the outcome.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{AuditReport, Rejected};
use crate::crypto::{derive_keypair, sha256, Digest, EnvelopeKeys, PublicKey};
use crate::network::{payment_time, Bus, LatencyProfile};
use crate::protocol::{
    parse_node_id, BridgeConfig, BridgeState, CloseMode, Command, Event, GatewayConfig,
    GatewayState, Input, IotConfig, IotState, Phase, Role, StepError,
};
use crate::script::{p2pk_script, OutputKind, Script, Side};
use crate::tx::{
    build_commitment_tx, ChannelSnapshot, CommitmentTx, FeePayer, FundingInput, IotSecrets, NodeSecrets,
    OutPoint, Tx, DEFAULT_CSV_DELAY, DEFAULT_FUNDING_DEPTH,
};

mod adversary;
mod bench;
mod cost;
mod exclusive;
mod world;

pub use adversary::{run_cheat_trial, run_forgery_trace, CheatTrial, ForgeryOutcome, ForgeryTemplate};
pub use bench::{bench_rows, live_payment_time, BenchRow, SPEEDS_MPH};
pub use cost::{cost_report, parse_percent, CostReport, Usd};
pub use exclusive::spendable_only_by;
pub use world::{LogEntry, World};

fn default_fee_rate() -> u16 {
    100
}
fn default_csv() -> u16 {
    DEFAULT_CSV_DELAY
}
fn default_depth() -> u32 {
    DEFAULT_FUNDING_DEPTH
}
fn default_onchain_fee() -> u64 {
    10_000
}
fn default_profile() -> String {
    "wifi".into()
}
fn default_true() -> bool {
    true
}
fn default_close_fee() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentSpec {
    pub amount_sat: u64,
    /// 33-byte node id in hex; defaults to the toll gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheatSpec {
    /// `gateway` or `bridge`.
    pub role: Role,
    pub state_index: u64,
    #[serde(default = "default_true")]
    pub watcher_enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseSpec {
    pub initiator: Role,
    pub mode: CloseMode,
    /// The gateway's opening closing-fee offer.
    #[serde(default = "default_close_fee")]
    pub fee_sat: u64,
    /// The bridge's preferred closing fee; defaults to `fee_sat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge_fee_sat: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub capacity_sat: u64,
    #[serde(default)]
    pub payments: Vec<PaymentSpec>,
    #[serde(default = "default_fee_rate")]
    pub fee_rate_permille: u16,
    #[serde(default = "default_csv")]
    pub csv_delay: u16,
    #[serde(default = "default_depth")]
    pub funding_depth: u32,
    /// Fee of the funding transaction.
    #[serde(default = "default_onchain_fee")]
    pub onchain_fee_sat: u64,
    /// `wifi`, `ble` or `none`.
    #[serde(default = "default_profile")]
    pub profile: String,
    /// Replaces the named profile's constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyProfile>,
    #[serde(default)]
    pub jitter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheat: Option<CheatSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close: Option<CloseSpec>,
    /// The bridge stops answering from this payment (0-based) on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge_offline_at_payment: Option<usize>,
}

impl ScenarioConfig {
    /// Open 5 BTC, pay 1 BTC at 10%, mutual close requested by the device.
    pub fn reference() -> ScenarioConfig {
        ScenarioConfig {
            capacity_sat: 500_000_000,
            payments: vec![PaymentSpec {
                amount_sat: 100_000_000,
                destination: None,
            }],
            fee_rate_permille: 100,
            csv_delay: DEFAULT_CSV_DELAY,
            funding_depth: DEFAULT_FUNDING_DEPTH,
            onchain_fee_sat: 10_000,
            profile: "wifi".into(),
            latency: None,
            jitter: false,
            cheat: None,
            close: Some(CloseSpec {
                initiator: Role::Iot,
                mode: CloseMode::Mutual,
                fee_sat: 10_000,
                bridge_fee_sat: None,
            }),
            bridge_offline_at_payment: None,
        }
    }

    pub fn from_json(s: &str) -> Result<ScenarioConfig, ScenarioError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(s).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn latency_profile(&self) -> Result<LatencyProfile, ScenarioError> {
        let p = match &self.latency {
            Some(p) => p.clone(),
            None => LatencyProfile::named(&self.profile)
                .map_err(|e| ScenarioError::Config(e.to_string()))?,
        };
        p.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.capacity_sat <= self.onchain_fee_sat {
            return bad(format!(
                "capacity_sat {} must exceed onchain_fee_sat {}",
                self.capacity_sat, self.onchain_fee_sat
            ));
        }
        if self.fee_rate_permille > 1000 {
            return bad("fee_rate_permille must be at most 1000".into());
        }
        if self.funding_depth == 0 {
            return bad("funding_depth must be at least 1".into());
        }
        self.latency_profile()?;
        let total: u64 = self.payments.iter().map(|p| p.amount_sat).sum();
        if total > self.capacity_sat {
            return bad(format!(
                "payments total {total} sat, capacity is {} sat",
                self.capacity_sat
            ));
        }
        for (i, p) in self.payments.iter().enumerate() {
            if p.amount_sat == 0 {
                return bad(format!("payment {i} has zero amount"));
            }
            if let Some(d) = &p.destination {
                parse_node_id(d).map_err(|e| ScenarioError::Config(e.to_string()))?;
            }
        }
        if let Some(c) = &self.cheat {
            if c.role == Role::Iot {
                return bad("cheat.role must be gateway or bridge".into());
            }
            if c.state_index >= self.payments.len() as u64 {
                return bad(format!(
                    "cheat.state_index {} is not revoked after {} payments",
                    c.state_index,
                    self.payments.len()
                ));
            }
            if self.close.is_some() {
                return bad("cheat and close are mutually exclusive".into());
            }
        }
        if let Some(c) = &self.close {
            if c.initiator == Role::Bridge && c.mode == CloseMode::Mutual {
                return bad("the bridge only closes unilaterally".into());
            }
        }
        if let Some(k) = self.bridge_offline_at_payment {
            if k >= self.payments.len() {
                return bad(format!("bridge_offline_at_payment {k} is past the last payment"));
            }
            if self.cheat.is_some() {
                return bad("bridge_offline_at_payment cannot be combined with cheat".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] StepError),
    #[error("{} broadcast {txid} rejected: {reason}", role.name())]
    Rejected {
        role: Role,
        txid: String,
        reason: Rejected,
    },
    #[error("codec: {0}")]
    Codec(String),
}

impl ScenarioError {
    /// 1 for configuration errors, 2 for protocol failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timings {
    pub open_s: f64,
    pub payments_s: Vec<f64>,
    pub analytic_payment_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub close_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelSummary {
    pub funding_txid: Digest,
    pub capacity_sat: u64,
    pub state_index: u64,
    pub balance_iot_sat: u64,
    pub balance_gateway_fees_sat: u64,
    pub balance_bridge_sat: u64,
    pub pending_htlc_sat: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Iot,
    Gateway,
    Bridge,
    Htlc,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputSummary {
    pub vout: u32,
    pub owner: Owner,
    pub value_sat: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<OutputKind>,
    pub spent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CloseSummary {
    pub txid: Digest,
    /// `mutual`, `gateway_commitment` or `bridge_commitment`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_index: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fee_sat: Option<u64>,
    pub outputs: Vec<OutputSummary>,
}

/// Unspent value descending from the funding output, by owner.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Balances {
    pub iot_sat: u64,
    pub gateway_sat: u64,
    pub bridge_sat: u64,
    pub htlc_sat: u64,
    pub unknown_sat: u64,
    pub onchain_fees_sat: u64,
}

impl fmt::Display for Balances {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iot {} / gateway {} / bridge {} / htlc {} / unknown {} / fees {} sat",
            self.iot_sat,
            self.gateway_sat,
            self.bridge_sat,
            self.htlc_sat,
            self.unknown_sat,
            self.onchain_fees_sat
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Punishment {
    pub cheater: Role,
    pub revoked_state: u64,
    pub watcher_enabled: bool,
    pub revoked_confirmed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub justice_txid: Option<Digest>,
    pub swept_sat: u64,
    /// Cheater's revocable output value still unspent.
    pub cheater_output_remaining_sat: u64,
    pub to_iot_sat: u64,
    pub to_iot_exclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Feasibility {
    pub speed_mph: f64,
    pub window_s: f64,
    pub payment_time_s: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub profile: String,
    pub timings: Timings,
    pub channel: ChannelSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closing: Option<CloseSummary>,
    pub final_balances: Balances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub punishment: Option<Punishment>,
    pub feasibility: Vec<Feasibility>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_audit: Option<AuditReport>,
    pub audits: Vec<AuditCheck>,
    pub passed: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rounds to microseconds so reports print cleanly.
fn us(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// The default payment destination.
pub fn toll_gate_node() -> PublicKey {
    derive_keypair(b"toll-gate", "node").public
}

/// Key material for one scenario seed.
pub struct Participants {
    pub iot: IotSecrets,
    pub gateway: NodeSecrets,
    pub bridge: NodeSecrets,
    pub gateway_seed: [u8; 32],
    pub bridge_seed: [u8; 32],
    pub envelope: EnvelopeKeys,
}

impl Participants {
    pub fn from_seed(seed: u64) -> Participants {
        let m = |who: &str| format!("iotln/{seed}/{who}").into_bytes();
        Participants {
            iot: IotSecrets::derive(&m("iot")),
            gateway: NodeSecrets::derive(&m("gateway"), "gateway"),
            bridge: NodeSecrets::derive(&m("bridge"), "bridge"),
            gateway_seed: sha256(&m("gateway/revocation")),
            bridge_seed: sha256(&m("bridge/revocation")),
            envelope: EnvelopeKeys::derive(&m("iot/envelope")),
        }
    }
}

/// Builds a world for `cfg` with the device's wallet coin already on chain.
pub fn build_world(cfg: &ScenarioConfig, seed: u64) -> Result<World, ScenarioError> {
    cfg.validate()?;
    let p = Participants::from_seed(seed);
    let mut chain = crate::chain::SimChain::new();
    let wallet_value = cfg.capacity_sat + cfg.onchain_fee_sat + 1_000_000;
    let outpoint = chain.mint(wallet_value, p2pk_script(&p.iot.payment.public));
    let wallet = FundingInput {
        outpoint,
        value_sat: wallet_value,
    };
    let (gw_fee, br_fee) = match &cfg.close {
        Some(c) => (c.fee_sat, c.bridge_fee_sat.unwrap_or(c.fee_sat)),
        None => (default_close_fee(), default_close_fee()),
    };
    let gateway_cfg = GatewayConfig {
        fee_rate_permille: cfg.fee_rate_permille,
        csv_delay: cfg.csv_delay,
        funding_depth: cfg.funding_depth,
        onchain_fee_sat: cfg.onchain_fee_sat,
        close_mode: cfg.close.as_ref().map_or(CloseMode::Mutual, |c| c.mode),
        closing_fee_sat: gw_fee,
        ..GatewayConfig::default()
    };
    let iot_cfg = IotConfig {
        max_closing_fee_sat: IotConfig::default().max_closing_fee_sat.max(gw_fee.max(br_fee)),
    };
    let profile = cfg.latency_profile()?;
    let bus = if cfg.jitter {
        Bus::with_jitter(seed)
    } else {
        Bus::new()
    };
    Ok(World::new(
        IotState::new(p.iot, wallet, iot_cfg),
        GatewayState::new(p.gateway, p.gateway_seed, gateway_cfg),
        BridgeState::new(
            p.bridge,
            p.bridge_seed,
            BridgeConfig {
                closing_fee_sat: br_fee,
            },
        ),
        chain,
        profile,
        bus,
        p.envelope,
    ))
}

/// Opens the channel and mines until both nodes report it operational.
/// Returns the simulated time spent on messages.
pub fn open_channel(world: &mut World, capacity_sat: u64) -> Result<f64, ScenarioError> {
    let start = world.now();
    world.input(Role::Iot, Input::Command(Command::Open { capacity_sat }))?;
    let depth = world
        .gateway
        .params()
        .map(|p| p.funding_depth)
        .ok_or_else(|| ScenarioError::Config("channel was not accepted".into()))?;
    for _ in 0..depth + 1 {
        if world.gateway.phase() == Phase::Operational && world.bridge.phase() == Phase::Operational
        {
            break;
        }
        world.mine(1)?;
    }
    if world.gateway.phase() != Phase::Operational || world.bridge.phase() != Phase::Operational {
        return Err(ScenarioError::Config("channel did not become operational".into()));
    }
    Ok(world.now() - start)
}

/// Sends one payment from the device. Returns the time from the request to
/// the device's PaymentSuccess, or `None` if it never completed.
pub fn pay(world: &mut World, amount_sat: u64, destination: PublicKey) -> Result<Option<f64>, ScenarioError> {
    let mark = world.log.len();
    let start = world.now();
    world.input(
        Role::Iot,
        Input::Command(Command::Pay {
            amount_sat,
            destination,
        }),
    )?;
    Ok(world
        .event_after(mark, Role::Iot, |e| matches!(e, Event::PaymentCompleted { .. }))
        .map(|t| t - start))
}

/// Runs a scenario end to end. Protocol and configuration failures are
/// errors; failed audits are reported in [`Report::audits`].
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Report, ScenarioError> {
    run_scenario_world(cfg, seed).map(|(report, _)| report)
}

/// [`run_scenario`], also handing back the world it ran in.
pub fn run_scenario_world(cfg: &ScenarioConfig, seed: u64) -> Result<(Report, World), ScenarioError> {
    let mut world = build_world(cfg, seed)?;
    let profile = cfg.latency_profile()?;
    let mut audits = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        audits.push(AuditCheck {
            name: name.into(),
            passed,
            detail,
        })
    };

    let open_s = open_channel(&mut world, cfg.capacity_sat)?;
    let mut states: Vec<ChannelSnapshot> = vec![world.gateway.snapshot().unwrap().clone()];
    let mut payments_s = Vec::new();
    let mut fee_problems = Vec::new();
    for (i, p) in cfg.payments.iter().enumerate() {
        if cfg.bridge_offline_at_payment == Some(i) {
            world.bridge_offline = true;
        }
        let dest = match &p.destination {
            Some(d) => parse_node_id(d).map_err(|e| ScenarioError::Config(e.to_string()))?,
            None => toll_gate_node(),
        };
        let before = world.gateway.snapshot().unwrap().settled();
        let Some(t) = pay(&mut world, p.amount_sat, dest)? else {
            break;
        };
        payments_s.push(us(t));
        let after = world.gateway.snapshot().unwrap().clone();
        let fee = p.amount_sat * cfg.fee_rate_permille as u64 / 1000;
        let htlc = after.htlcs.last().map_or(0, |h| h.amount_sat);
        if after.balance_gateway_fees_sat - before.balance_gateway_fees_sat != fee
            || htlc != p.amount_sat - fee
        {
            fee_problems.push(format!("payment {i}"));
        }
        states.push(after);
    }
    let completed = payments_s.len();

    let funding = world.funding_outpoint().expect("channel is open");
    let funding_txid = funding.txid;
    let latest = world.gateway.snapshot().unwrap().clone();
    let bridge_snap = world.bridge.snapshot().unwrap().clone();

    let mut close_s = None;
    let mut punishment = None;
    if let Some(c) = &cfg.cheat {
        world.watchers_enabled = c.watcher_enabled;
        let cmd = Input::Command(Command::BroadcastRevoked {
            state_index: c.state_index,
        });
        world.input(c.role, cmd)?;
        world.mine(2)?;
    } else if let Some(c) = &cfg.close {
        let start = world.now();
        let input = match c.initiator {
            Role::Bridge => Input::Command(Command::ForceClose),
            _ => Input::Command(Command::Close),
        };
        world.input(c.initiator, input)?;
        close_s = Some(us(world.now() - start));
        world.mine(1)?;
    } else if !world.chain.mempool().is_empty() {
        // the gateway gave up on an unresponsive bridge
        world.mine(1)?;
    }

    // Classify whatever spent the funding output.
    let prefer = match (&cfg.cheat, &cfg.close) {
        (Some(CheatSpec { role: Role::Bridge, .. }), _) => Side::Bridge,
        (None, Some(CloseSpec { initiator: Role::Bridge, .. })) => Side::Bridge,
        _ => Side::Gateway,
    };
    let spender = world.chain.spender(&funding).cloned();
    let commitment = spender
        .as_ref()
        .and_then(|tx| match_commitment(&world, &states, tx, prefer));
    let owners = script_owners(&world, commitment.as_ref());
    let closing = spender
        .as_ref()
        .map(|tx| summarize_close(&world, tx, commitment.as_ref(), &owners));
    let final_balances = balances(&world, &funding, cfg.capacity_sat, &owners);

    if let Some(c) = &cfg.cheat {
        let revoked = &states[c.state_index as usize];
        let com = commitment.as_ref();
        let confirmed = com.is_some_and(|r| r.state_index == c.state_index);
        let side = match c.role {
            Role::Bridge => Side::Bridge,
            _ => Side::Gateway,
        };
        let cheater_out = com.and_then(|r| r.find(OutputKind::ToLocal));
        let remaining = cheater_out
            .map(|v| {
                let op = OutPoint::new(com.unwrap().txid(), v);
                world.chain.utxo(&op).map_or(0, |u| u.value)
            })
            .unwrap_or(0);
        let justice = world.justice.first().map(|(_, t)| *t);
        let swept = justice
            .and_then(|t| world.chain.transaction(&t))
            .map_or(0, |t| t.total_output());
        let to_iot = com.and_then(|r| r.find(OutputKind::ToIot));
        let to_iot_sat = com.map_or(0, |r| r.value_of(OutputKind::ToIot));
        let exclusive = match (com, to_iot) {
            (Some(r), Some(v)) => {
                let op = OutPoint::new(r.txid(), v);
                world.chain.utxo(&op).is_some_and(|u| {
                    spendable_only_by(&world, &u.script, u.value, &world.iot.secrets().payment)
                })
            }
            _ => false,
        };
        check(
            "revoked_state_confirmed",
            confirmed && com.is_some_and(|r| r.side == side),
            format!("state {} on the {} side", c.state_index, side.name()),
        );
        if c.watcher_enabled {
            let expected = match c.role {
                Role::Bridge => revoked.balance_bridge_sat + revoked.pending_sat(),
                _ => revoked.balance_gateway_fees_sat + revoked.pending_sat(),
            };
            check(
                "punishment_complete",
                remaining == 0 && swept == expected,
                format!("swept {swept} sat of {expected} sat, {remaining} sat left"),
            );
        } else {
            check(
                "offline_vulnerability",
                justice.is_none() && remaining == com.map_or(0, |r| r.value_of(OutputKind::ToLocal)),
                format!("revoked output of {remaining} sat left unchallenged"),
            );
        }
        check(
            "to_iot_exclusive",
            exclusive,
            format!("to_IoT {to_iot_sat} sat spendable only by the device key"),
        );
        // The device never ends with less than its latest balance.
        check(
            "iot_safety",
            final_balances.iot_sat == revoked.balance_iot_sat
                && final_balances.iot_sat >= latest.balance_iot_sat,
            format!(
                "device holds {} sat, latest balance {} sat",
                final_balances.iot_sat, latest.balance_iot_sat
            ),
        );
        punishment = Some(Punishment {
            cheater: c.role,
            revoked_state: c.state_index,
            watcher_enabled: c.watcher_enabled,
            revoked_confirmed: confirmed,
            justice_txid: justice,
            swept_sat: swept,
            cheater_output_remaining_sat: remaining,
            to_iot_sat,
            to_iot_exclusive: exclusive,
        });
    } else if let Some(tx) = &spender {
        let payer = match cfg.close.as_ref().map(|c| c.initiator) {
            Some(Role::Gateway) => FeePayer::Gateway,
            _ => FeePayer::Iot,
        };
        let expected = expected_balances(&world, tx, commitment.as_ref(), &latest, payer);
        let detail = match &expected {
            Some(e) if *e == final_balances => final_balances.to_string(),
            Some(e) => format!("expected {e}, found {final_balances}"),
            None => format!("no expectation for this close, found {final_balances}"),
        };
        check(
            "settlement",
            expected.as_ref() == Some(&final_balances),
            detail,
        );
    }

    if let Some(k) = cfg.bridge_offline_at_payment {
        let own_latest = commitment
            .as_ref()
            .is_some_and(|c| c.side == Side::Gateway && c.state_index == latest.state_index);
        check(
            "unresponsive_close",
            completed == k && own_latest,
            format!(
                "{completed} of {} payments, then the gateway closed on its state {}",
                cfg.payments.len(),
                latest.state_index
            ),
        );
    }
    check(
        "fee_exactness",
        fee_problems.is_empty(),
        if fee_problems.is_empty() {
            format!("{completed} payments")
        } else {
            fee_problems.join(", ")
        },
    );
    let conserved = latest.check_conservation(cfg.capacity_sat).is_ok()
        && latest == bridge_snap;
    check(
        "channel_conservation",
        conserved,
        format!("state {} sums to capacity on both nodes", latest.state_index),
    );
    check(
        "balance_sum",
        final_balances.iot_sat
            + final_balances.gateway_sat
            + final_balances.bridge_sat
            + final_balances.htlc_sat
            + final_balances.unknown_sat
            + final_balances.onchain_fees_sat
            == cfg.capacity_sat,
        "report balances and fees sum to capacity".into(),
    );
    let chain_audit = world.chain.audit();
    check(
        "chain_audit",
        chain_audit.is_ok(),
        match &chain_audit {
            Ok(a) => format!("{} confirmed txs, no double spends", a.confirmed_txs),
            Err(e) => e.to_string(),
        },
    );

    let analytic = payment_time(&profile);
    let feasibility = match crate::network::radio_range(&cfg.profile) {
        Some(range) => SPEEDS_MPH
            .iter()
            .map(|&mph| {
                let window =
                    crate::network::toll_window(&crate::network::RangeModel::from_mph(range, mph));
                Feasibility {
                    speed_mph: mph,
                    window_s: us(window),
                    payment_time_s: us(analytic),
                    satisfied: crate::network::feasible(window, analytic),
                }
            })
            .collect(),
        None => Vec::new(),
    };

    let passed = audits.iter().all(|a| a.passed);
    let report = Report {
        seed,
        profile: cfg.profile.clone(),
        timings: Timings {
            open_s: us(open_s),
            payments_s,
            analytic_payment_s: us(analytic),
            close_s,
        },
        channel: ChannelSummary {
            funding_txid,
            capacity_sat: cfg.capacity_sat,
            state_index: latest.state_index,
            balance_iot_sat: latest.balance_iot_sat,
            balance_gateway_fees_sat: latest.balance_gateway_fees_sat,
            balance_bridge_sat: latest.balance_bridge_sat,
            pending_htlc_sat: latest.pending_sat(),
        },
        closing,
        final_balances,
        punishment,
        feasibility,
        chain_audit: chain_audit.ok(),
        audits,
        passed,
    };
    Ok((report, world))
}

/// Finds the commitment `tx` is. With no HTLCs and no node balance both
/// sides' commitments are the same transaction; `prefer` breaks the tie.
fn match_commitment(
    world: &World,
    states: &[ChannelSnapshot],
    tx: &Tx,
    prefer: Side,
) -> Option<CommitmentTx> {
    let params = world.gateway.params()?;
    let funding = world.funding_outpoint()?;
    let txid = tx.txid();
    let other = match prefer {
        Side::Gateway => Side::Bridge,
        Side::Bridge => Side::Gateway,
    };
    states.iter().find_map(|s| {
        [prefer, other].into_iter().find_map(|side| {
            build_commitment_tx(side, s, params, funding)
                .ok()
                .filter(|c| c.txid() == txid)
        })
    })
}

fn script_owners(world: &World, commitment: Option<&CommitmentTx>) -> HashMap<Script, Owner> {
    let mut m = HashMap::new();
    if let Some(p) = world.gateway.params() {
        m.insert(p2pk_script(&p.iot.payment), Owner::Iot);
        m.insert(p2pk_script(&p.gateway.payment), Owner::Gateway);
        m.insert(p2pk_script(&p.bridge.payment), Owner::Bridge);
    }
    if let Some(c) = commitment {
        for (o, out) in c.outputs.iter().zip(&c.tx.outputs) {
            let owner = match (o.kind, c.side) {
                (OutputKind::ToLocal, Side::Gateway) => Owner::Gateway,
                (OutputKind::ToLocal, Side::Bridge) => Owner::Bridge,
                (OutputKind::OfferedHtlc | OutputKind::ReceivedHtlc, _) => Owner::Htlc,
                _ => continue,
            };
            m.insert(out.script.clone(), owner);
        }
    }
    m
}

fn summarize_close(
    world: &World,
    tx: &Tx,
    commitment: Option<&CommitmentTx>,
    owners: &HashMap<Script, Owner>,
) -> CloseSummary {
    let txid = tx.txid();
    let outputs = tx
        .outputs
        .iter()
        .enumerate()
        .map(|(v, o)| OutputSummary {
            vout: v as u32,
            owner: owners.get(&o.script).copied().unwrap_or(Owner::Unknown),
            value_sat: o.value,
            kind: commitment.map(|c| c.outputs[v].kind),
            spent: world.chain.utxo(&OutPoint::new(txid, v as u32)).is_none(),
        })
        .collect();
    let capacity = world.gateway.params().map_or(0, |p| p.capacity_sat);
    match commitment {
        Some(c) => CloseSummary {
            txid,
            kind: format!("{}_commitment", c.side.name()),
            state_index: Some(c.state_index),
            fee_sat: None,
            outputs,
        },
        None => CloseSummary {
            txid,
            kind: "mutual".into(),
            state_index: None,
            fee_sat: Some(capacity - tx.total_output()),
            outputs,
        },
    }
}

/// Walks every confirmed transaction descending from the funding output
/// and sums the unspent outputs by owner.
fn balances(
    world: &World,
    funding: &OutPoint,
    capacity: u64,
    owners: &HashMap<Script, Owner>,
) -> Balances {
    let mut b = Balances::default();
    let mut family: BTreeSet<Digest> = BTreeSet::new();
    let mut has_spender = false;
    for block in world.chain.blocks() {
        for txid in &block.txids {
            let tx = world.chain.transaction(txid).expect("confirmed");
            let descends = tx
                .inputs
                .iter()
                .any(|i| i.outpoint == *funding || family.contains(&i.outpoint.txid));
            if descends {
                has_spender = true;
                family.insert(*txid);
            }
        }
    }
    if !has_spender {
        b.unknown_sat = capacity;
        return b;
    }
    let mut held = 0;
    for (op, u) in world.chain.utxos() {
        if !family.contains(&op.txid) {
            continue;
        }
        held += u.value;
        let slot = match owners.get(&u.script).copied().unwrap_or(Owner::Unknown) {
            Owner::Iot => &mut b.iot_sat,
            Owner::Gateway => &mut b.gateway_sat,
            Owner::Bridge => &mut b.bridge_sat,
            Owner::Htlc => &mut b.htlc_sat,
            Owner::Unknown => &mut b.unknown_sat,
        };
        *slot += u.value;
    }
    b.onchain_fees_sat = capacity - held;
    b
}

/// What an honest close of `latest` must leave on chain.
fn expected_balances(
    world: &World,
    tx: &Tx,
    commitment: Option<&CommitmentTx>,
    latest: &ChannelSnapshot,
    payer: FeePayer,
) -> Option<Balances> {
    let capacity = world.gateway.params()?.capacity_sat;
    match commitment {
        Some(c) if c.state_index == latest.state_index => Some(Balances {
            iot_sat: latest.balance_iot_sat,
            gateway_sat: latest.balance_gateway_fees_sat,
            bridge_sat: latest.balance_bridge_sat,
            htlc_sat: latest.pending_sat(),
            unknown_sat: 0,
            onchain_fees_sat: 0,
        }),
        Some(_) => None,
        None => {
            let s = latest.settled();
            let fee = capacity - tx.total_output();
            let (iot_fee, gw_fee) = match payer {
                FeePayer::Iot => (fee, 0),
                FeePayer::Gateway => (0, fee),
            };
            Some(Balances {
                iot_sat: s.balance_iot_sat.checked_sub(iot_fee)?,
                gateway_sat: s.balance_gateway_fees_sat.checked_sub(gw_fee)?,
                bridge_sat: s.balance_bridge_sat,
                htlc_sat: 0,
                unknown_sat: 0,
                onchain_fees_sat: fee,
            })
        }
    }
}
