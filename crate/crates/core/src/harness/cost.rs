use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

/// US dollars held as integer micro-dollars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Usd(pub u64);

impl Usd {
    pub const MICROS_PER_USD: u64 = 1_000_000;

    pub fn from_cents(cents: u64) -> Usd {
        Usd(cents * 10_000)
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

/// Parses a non-negative decimal with at most `scale` fractional digits into
/// an integer scaled by `10^scale`.
pub(crate) fn parse_fixed(s: &str, scale: u32) -> Option<u64> {
    let s = s.trim().trim_start_matches('$');
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > scale as usize {
        return None;
    }
    let digits = |d: &str| d.chars().all(|c| c.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return None;
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let pad = format!("{frac:0<width$}", width = scale as usize);
    let frac: u64 = if pad.is_empty() { 0 } else { pad.parse().ok()? };
    int.checked_mul(10u64.pow(scale))?.checked_add(frac)
}

impl FromStr for Usd {
    type Err = String;

    fn from_str(s: &str) -> Result<Usd, String> {
        parse_fixed(s, 6)
            .map(Usd)
            .ok_or_else(|| format!("{s:?} is not a dollar amount"))
    }
}

impl fmt::Display for Usd {
    /// Cents, rounded half up.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cents = (self.0 + 5_000) / 10_000;
        write!(f, "${}.{:02}", cents / 100, cents % 100)
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Parses a percentage such as `10` or `2.5` into basis points.
pub fn parse_percent(s: &str) -> Result<u32, String> {
    parse_fixed(s.trim_end_matches('%'), 2)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| format!("{s:?} is not a percentage with at most two decimals"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub passes_per_day: u64,
    pub toll: Usd,
    pub fee_bps: u32,
    pub days: u64,
    pub daily_total: Usd,
    pub daily_gateway_fees: Usd,
    pub total: Usd,
    pub gateway_fees: Usd,
}

/// Toll spending through a gateway that charges `fee_bps` basis points on
/// top of every toll.
pub fn cost_report(passes_per_day: u64, toll: Usd, fee_bps: u32, days: u64) -> CostReport {
    let daily_tolls = passes_per_day as u128 * toll.0 as u128;
    let daily_fees = daily_tolls * fee_bps as u128 / 10_000;
    let usd = |v: u128| Usd(u64::try_from(v).expect("cost fits in u64 micro-dollars"));
    CostReport {
        passes_per_day,
        toll,
        fee_bps,
        days,
        daily_total: usd(daily_tolls + daily_fees),
        daily_gateway_fees: usd(daily_fees),
        total: usd((daily_tolls + daily_fees) * days as u128),
        gateway_fees: usd(daily_fees * days as u128),
    }
}
