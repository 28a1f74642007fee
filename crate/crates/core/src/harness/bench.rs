use serde::Serialize;

use crate::network::{
    feasible, payment_time, radio_range, toll_window, LatencyProfile, NetworkError, RangeModel,
};
use crate::protocol::Role;

use super::{build_world, open_channel, pay, toll_gate_node, ScenarioConfig, ScenarioError};

/// Vehicle speeds of the toll-gate table, in mph.
pub const SPEEDS_MPH: [f64; 3] = [50.0, 60.0, 80.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub profile: String,
    pub speed_mph: f64,
    pub range_m: f64,
    pub window_s: f64,
    pub payment_time_s: f64,
    pub satisfied: bool,
}

/// Toll-gate window against analytic payment time for every profile and
/// speed. Profiles must have a radio range (`wifi` or `ble`).
pub fn bench_rows(profiles: &[&str], speeds: &[f64]) -> Result<Vec<BenchRow>, NetworkError> {
    let mut rows = Vec::new();
    for &name in profiles {
        let p = LatencyProfile::named(name)?;
        let range = radio_range(name).ok_or_else(|| NetworkError::UnknownProfile(name.into()))?;
        let t = payment_time(&p);
        for &mph in speeds {
            let r = RangeModel::from_mph(range, mph);
            r.validate()?;
            let window = toll_window(&r);
            rows.push(BenchRow {
                profile: name.into(),
                speed_mph: mph,
                range_m: range,
                window_s: window,
                payment_time_s: t,
                satisfied: feasible(window, t),
            });
        }
    }
    Ok(rows)
}

/// Runs a real payment through the role state machines over a bus that
/// applies `profile`'s delays, and returns the device-observed time.
pub fn live_payment_time(
    profile: &LatencyProfile,
    jitter_seed: Option<u64>,
) -> Result<f64, ScenarioError> {
    let mut cfg = ScenarioConfig::reference();
    cfg.latency = Some(profile.clone());
    cfg.close = None;
    cfg.jitter = jitter_seed.is_some();
    let mut world = build_world(&cfg, jitter_seed.unwrap_or(0))?;
    open_channel(&mut world, cfg.capacity_sat)?;
    let t = pay(&mut world, cfg.payments[0].amount_sat, toll_gate_node())?;
    t.ok_or_else(|| {
        ScenarioError::Config(format!(
            "payment did not complete, gateway in {:?}",
            world.phase(Role::Gateway)
        ))
    })
}
