use crate::chain::{watch_and_punish, SimChain, WatchEntry};
use crate::crypto::{Digest, EnvelopeKeys};
use crate::network::{Bus, LatencyProfile};
use crate::protocol::{
    open_message, seal_message, BridgeState, ChainEvent, Effect, Event, GatewayState, Input,
    IotState, Message, Phase, Role,
};
use crate::tx::{OutPoint, Tx};

use super::ScenarioError;

/// Something that happened during a run, stamped with simulated time.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub at: f64,
    pub role: Role,
    pub event: Event,
}

/// The three roles, the message bus and the chain, driven to quiescence
/// after every external stimulus.
pub struct World {
    pub iot: IotState,
    pub gateway: GatewayState,
    pub bridge: BridgeState,
    pub chain: SimChain,
    pub log: Vec<LogEntry>,
    /// Transactions each role broadcast, in order.
    pub broadcasts: Vec<(Role, Digest)>,
    pub justice: Vec<(Role, Digest)>,
    pub watchers_enabled: bool,
    /// Messages addressed to the bridge are dropped while set.
    pub bridge_offline: bool,
    /// When set, every delivered message is appended to `messages`.
    pub record_messages: bool,
    pub messages: Vec<(Role, Role, Message)>,
    bus: Bus<Message>,
    profile: LatencyProfile,
    envelope: EnvelopeKeys,
    deadline_s: f64,
    funding_spent_seen: bool,
}

impl World {
    pub fn new(
        iot: IotState,
        gateway: GatewayState,
        bridge: BridgeState,
        chain: SimChain,
        profile: LatencyProfile,
        bus: Bus<Message>,
        envelope: EnvelopeKeys,
    ) -> World {
        World {
            iot,
            gateway,
            bridge,
            chain,
            log: Vec::new(),
            broadcasts: Vec::new(),
            justice: Vec::new(),
            watchers_enabled: true,
            bridge_offline: false,
            record_messages: false,
            messages: Vec::new(),
            bus,
            profile,
            envelope,
            deadline_s: 30.0,
            funding_spent_seen: false,
        }
    }

    pub fn now(&self) -> f64 {
        self.bus.now()
    }

    pub fn phase(&self, role: Role) -> Phase {
        match role {
            Role::Iot => self.iot.phase(),
            Role::Gateway => self.gateway.phase(),
            Role::Bridge => self.bridge.phase(),
        }
    }

    /// Steps one role, then delivers messages until the system is quiet.
    pub fn input(&mut self, role: Role, input: Input) -> Result<(), ScenarioError> {
        self.step(role, &input)?;
        self.settle()
    }

    fn step(&mut self, role: Role, input: &Input) -> Result<(), ScenarioError> {
        let effects = match role {
            Role::Iot => {
                let (s, fx) = self.iot.step(input)?;
                self.iot = s;
                fx
            }
            Role::Gateway => {
                let (s, fx) = self.gateway.step(input)?;
                self.gateway = s;
                fx
            }
            Role::Bridge => {
                let (s, fx) = self.bridge.step(input)?;
                self.bridge = s;
                fx
            }
        };
        for e in effects {
            match e {
                Effect::Send { to, msg } => {
                    let msg = self.transport(role, to, msg)?;
                    let delay = self.profile.message_delay(role, to, &msg);
                    self.bus.send(role, to, msg, delay);
                }
                Effect::Broadcast(tx) => {
                    let txid = self.broadcast(role, tx)?;
                    self.broadcasts.push((role, txid));
                }
                Effect::Event(event) => self.log.push(LogEntry {
                    at: self.bus.now(),
                    role,
                    event,
                }),
            }
        }
        Ok(())
    }

    /// Puts a message through the same encoding it would have on the wire:
    /// a sealed envelope on the IoT link, bare bytes between the nodes.
    fn transport(&self, from: Role, to: Role, msg: Message) -> Result<Message, ScenarioError> {
        let decoded = if from == Role::Iot || to == Role::Iot {
            let env = seal_message(&msg, &self.envelope);
            open_message(&env, &self.envelope).map_err(|e| ScenarioError::Codec(e.to_string()))?
        } else {
            Message::decode(&msg.encode()).map_err(|e| ScenarioError::Codec(e.to_string()))?
        };
        if decoded != msg {
            return Err(ScenarioError::Codec(format!("{} did not round-trip", msg.name())));
        }
        Ok(decoded)
    }

    fn broadcast(&mut self, role: Role, tx: Tx) -> Result<Digest, ScenarioError> {
        let txid = tx.txid();
        self.chain.broadcast(tx).map_err(|reason| ScenarioError::Rejected {
            role,
            txid: txid.to_string(),
            reason,
        })
    }

    /// Delivers queued messages. When the queue drains while the gateway is
    /// still waiting on the bridge, its deadline fires.
    pub fn settle(&mut self) -> Result<(), ScenarioError> {
        loop {
            while let Some((from, to, msg)) = self.bus.pop() {
                if to == Role::Bridge && self.bridge_offline {
                    continue;
                }
                if self.record_messages {
                    self.messages.push((from, to, msg.clone()));
                }
                self.step(to, &Input::msg(from, msg))?;
            }
            let waiting = matches!(
                self.gateway.phase(),
                Phase::AwaitIotSig | Phase::AwaitRevokeAck
            );
            if !waiting {
                return Ok(());
            }
            self.bus.advance(self.deadline_s);
            self.step(Role::Gateway, &Input::Timeout)?;
        }
    }

    /// Mines `n` blocks one at a time, telling both nodes about each block
    /// and running the watchers after it.
    pub fn mine(&mut self, n: u32) -> Result<(), ScenarioError> {
        for _ in 0..n {
            self.chain
                .mine_blocks(1)
                .map_err(|e| ScenarioError::Config(e.to_string()))?;
            let height = self.chain.tip_height();
            let confirmations = self
                .gateway
                .funding_tx()
                .map_or(0, |t| self.chain.confirmations(&t.txid()));
            for role in [Role::Gateway, Role::Bridge] {
                if self.phase(role) != Phase::Idle {
                    self.step(
                        role,
                        &Input::Chain(ChainEvent::Block {
                            height,
                            funding_confirmations: confirmations,
                        }),
                    )?;
                }
            }
            self.notify_funding_spent()?;
            self.settle()?;
            if self.watchers_enabled {
                self.run_watchers()?;
            }
        }
        Ok(())
    }

    fn notify_funding_spent(&mut self) -> Result<(), ScenarioError> {
        let Some(funding) = self.gateway.funding_outpoint() else {
            return Ok(());
        };
        if self.funding_spent_seen {
            return Ok(());
        }
        let Some(spender) = self.chain.spender(&funding) else {
            return Ok(());
        };
        self.funding_spent_seen = true;
        let txid = spender.txid();
        for role in [Role::Gateway, Role::Bridge] {
            if !matches!(self.phase(role), Phase::Closed | Phase::Idle) {
                self.step(role, &Input::Chain(ChainEvent::FundingSpent { txid }))?;
            }
        }
        Ok(())
    }

    pub fn funding_outpoint(&self) -> Option<OutPoint> {
        self.gateway.funding_outpoint()
    }

    /// Watch entries of both nodes for the current channel.
    pub fn watch_entries(&self) -> Vec<WatchEntry> {
        let Some(funding) = self.funding_outpoint() else {
            return Vec::new();
        };
        let mut bridge = WatchEntry::new(funding, Role::Bridge, self.bridge.secrets().payment.public);
        for r in self.bridge.revoked_gateway_commitments() {
            bridge.add(r.clone());
        }
        let mut gateway =
            WatchEntry::new(funding, Role::Gateway, self.gateway.secrets().payment.public);
        for r in self.gateway.revoked_bridge_commitments() {
            gateway.add(r.clone());
        }
        vec![bridge, gateway]
    }

    fn run_watchers(&mut self) -> Result<(), ScenarioError> {
        let entries = self.watch_entries();
        let found: Vec<_> = entries
            .iter()
            .flat_map(|e| {
                watch_and_punish(&self.chain, std::slice::from_ref(e))
                    .into_iter()
                    .map(move |t| (e.owner, t))
            })
            .collect();
        for (e, tx) in found {
            let txid = self.broadcast(e, tx)?;
            self.justice.push((e, txid));
        }
        Ok(())
    }

    /// Simulated time of the first event of `role` logged at or after log
    /// position `mark` that matches `pred`.
    pub fn event_after(&self, mark: usize, role: Role, pred: impl Fn(&Event) -> bool) -> Option<f64> {
        self.log[mark..]
            .iter()
            .find(|l| l.role == role && pred(&l.event))
            .map(|l| l.at)
    }
}
