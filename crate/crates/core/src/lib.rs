//! Three-party payment channels: an IoT device funds a 3-of-3 channel that an
//! untrusted gateway operates against a bridge node on its behalf.
//!
//! Everything runs against a deterministic simulated chain, and an analytic
//! latency model reproduces end-to-end payment timings.

pub mod crypto;
pub mod script;
pub mod tx;
pub mod protocol;
pub mod chain;
pub mod network;
pub mod harness;
