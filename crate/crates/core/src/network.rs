//! Analytic latency model for payments from a moving vehicle, and a
//! discrete-event message bus that applies the same delays to live runs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Message, PeerMessage, Role};

/// Miles per hour to metres per second.
pub const MPH_TO_MPS: f64 = 0.44704;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("unknown profile {0:?}, expected wifi, ble or none")]
    UnknownProfile(String),
    #[error("{field} must be finite and non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("{field} must be positive, got {value}")]
    NotPositive { field: &'static str, value: f64 },
}

/// Delay constants, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub iot_link_rtt: f64,
    pub cloud_rtt: f64,
    pub ln_settle: f64,
    pub iot_compute_per_msg: f64,
    /// Messages exchanged on the IoT link during one payment.
    pub exchanges: u32,
    /// How many of those the IoT device generates.
    pub iot_messages: u32,
}

impl LatencyProfile {
    pub fn wifi() -> LatencyProfile {
        LatencyProfile {
            iot_link_rtt: 0.009,
            ..LatencyProfile::none()
        }
        .with_cloud()
    }

    pub fn ble() -> LatencyProfile {
        LatencyProfile {
            iot_link_rtt: 0.8,
            ..LatencyProfile::none()
        }
        .with_cloud()
    }

    /// The gateway pays directly, with no IoT link at all.
    pub fn none() -> LatencyProfile {
        LatencyProfile {
            iot_link_rtt: 0.0,
            cloud_rtt: 0.0,
            ln_settle: 2.1,
            iot_compute_per_msg: 0.0,
            exchanges: 4,
            iot_messages: 2,
        }
    }

    fn with_cloud(self) -> LatencyProfile {
        LatencyProfile {
            cloud_rtt: 0.123,
            iot_compute_per_msg: 0.015,
            ..self
        }
    }

    pub fn named(name: &str) -> Result<LatencyProfile, NetworkError> {
        match name {
            "wifi" => Ok(LatencyProfile::wifi()),
            "ble" => Ok(LatencyProfile::ble()),
            "none" => Ok(LatencyProfile::none()),
            _ => Err(NetworkError::UnknownProfile(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for (field, value) in [
            ("iot_link_rtt", self.iot_link_rtt),
            ("cloud_rtt", self.cloud_rtt),
            ("ln_settle", self.ln_settle),
            ("iot_compute_per_msg", self.iot_compute_per_msg),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(NetworkError::Negative { field, value });
            }
        }
        Ok(())
    }

    /// One-way cost of a message on the IoT link, including the device's
    /// processing when it is the sender.
    pub fn iot_hop(&self, from_iot: bool) -> f64 {
        let base = self.iot_link_rtt + self.cloud_rtt;
        if from_iot {
            base + self.iot_compute_per_msg
        } else {
            base
        }
    }

    /// Delay the bus applies to one message. The Lightning settlement time is
    /// charged to the bridge's revoke_and_ack, the one peer message on the
    /// critical path of every payment.
    pub fn message_delay(&self, from: Role, to: Role, msg: &Message) -> f64 {
        match (from, to, msg) {
            (Role::Iot, _, _) => self.iot_hop(true),
            (_, Role::Iot, _) => self.iot_hop(false),
            (Role::Bridge, _, Message::Peer(PeerMessage::RevokeAndAck { .. })) => self.ln_settle,
            _ => 0.0,
        }
    }
}

/// Seconds from the IoT device's request to its PaymentSuccess.
pub fn payment_time(p: &LatencyProfile) -> f64 {
    p.ln_settle
        + p.exchanges as f64 * (p.iot_link_rtt + p.cloud_rtt)
        + p.iot_messages as f64 * p.iot_compute_per_msg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeModel {
    /// Metres.
    pub radio_range: f64,
    /// Metres per second.
    pub speed: f64,
}

impl RangeModel {
    pub fn from_mph(radio_range: f64, mph: f64) -> RangeModel {
        RangeModel {
            radio_range,
            speed: mph * MPH_TO_MPS,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for (field, value) in [("radio_range", self.radio_range), ("speed", self.speed)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(NetworkError::NotPositive { field, value });
            }
        }
        Ok(())
    }
}

/// Radio range of each named link, in metres.
pub fn radio_range(profile: &str) -> Option<f64> {
    match profile {
        "wifi" => Some(250.0),
        "ble" => Some(220.0),
        _ => None,
    }
}

/// Seconds the vehicle spends inside radio range of the toll gate. Callers
/// round for display only.
pub fn toll_window(r: &RangeModel) -> f64 {
    if r.speed <= 0.0 || r.radio_range <= 0.0 {
        return 0.0;
    }
    r.radio_range / r.speed
}

pub fn feasible(window: f64, payment_time: f64) -> bool {
    window >= payment_time
}

struct Scheduled<T> {
    at: f64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Scheduled<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<T> Eq for Scheduled<T> {}
impl<T> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Scheduled<T> {
    // Reversed so the max-heap pops the earliest event, ties in send order.
    fn cmp(&self, o: &Self) -> Ordering {
        o.at.total_cmp(&self.at).then(o.seq.cmp(&self.seq))
    }
}

/// A single-threaded discrete-event queue. Delivery on each directed link is
/// FIFO: a message never overtakes one sent earlier on the same link.
pub struct Bus<T> {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Scheduled<(Role, Role, T)>>,
    link_free: HashMap<(Role, Role), f64>,
    jitter: Option<ChaCha8Rng>,
}

impl<T> Bus<T> {
    pub fn new() -> Bus<T> {
        Bus {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            link_free: HashMap::new(),
            jitter: None,
        }
    }

    /// Scales every delay by a uniform factor in [0.9, 1.1].
    pub fn with_jitter(seed: u64) -> Bus<T> {
        Bus {
            jitter: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Bus::new()
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn send(&mut self, from: Role, to: Role, item: T, delay: f64) {
        let delay = match &mut self.jitter {
            Some(rng) if delay > 0.0 => delay * rng.gen_range(0.9..=1.1),
            _ => delay,
        };
        let free = self.link_free.entry((from, to)).or_insert(0.0);
        let at = (self.now + delay).max(*free);
        *free = at;
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            item: (from, to, item),
        });
    }

    /// Next delivery as `(from, to, item)`, advancing the clock.
    pub fn pop(&mut self) -> Option<(Role, Role, T)> {
        let s = self.queue.pop()?;
        self.now = s.at;
        Some(s.item)
    }

    /// Moves the clock forward without delivering anything.
    pub fn advance(&mut self, seconds: f64) {
        self.now += seconds;
    }
}

impl<T> Default for Bus<T> {
    fn default() -> Self {
        Bus::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_profiles() {
        assert_eq!(LatencyProfile::named("wifi").unwrap().iot_link_rtt, 0.009);
        assert_eq!(LatencyProfile::named("ble").unwrap().iot_link_rtt, 0.8);
        assert!(LatencyProfile::named("lte").is_err());
        let mut p = LatencyProfile::wifi();
        p.cloud_rtt = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn degenerate_range_gives_zero_window() {
        let r = RangeModel::from_mph(0.0, 50.0);
        assert!(r.validate().is_err());
        assert_eq!(toll_window(&r), 0.0);
    }

    #[test]
    fn bus_orders_by_time_and_keeps_links_fifo() {
        let mut b = Bus::new();
        b.send(Role::Bridge, Role::Gateway, "slow", 2.0);
        b.send(Role::Bridge, Role::Gateway, "fast", 0.0);
        b.send(Role::Iot, Role::Gateway, "iot", 1.0);
        let order: Vec<_> = std::iter::from_fn(|| b.pop().map(|m| m.2)).collect();
        assert_eq!(order, vec!["iot", "slow", "fast"]);
        assert_eq!(b.now(), 2.0);
    }

    #[test]
    fn jitter_stays_within_ten_percent() {
        let mut b = Bus::with_jitter(7);
        for _ in 0..100 {
            let start = b.now();
            b.send(Role::Iot, Role::Gateway, (), 1.0);
            b.pop();
            let d = b.now() - start;
            assert!((0.9..=1.1).contains(&d), "{d}");
        }
    }
}
