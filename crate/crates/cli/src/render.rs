//! Text rendering of scenario reports.

use std::fmt::Write;

use iotln::harness::{BenchRow, CostReport, Owner, Report};
use iotln::script::OutputKind;
use iotln::tx::COIN;

use crate::table::Table;

pub fn btc(sat: u64) -> String {
    format!("{}.{:08}", sat / COIN, sat % COIN)
}

pub fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

fn owner_name(o: Owner) -> &'static str {
    match o {
        Owner::Iot => "iot",
        Owner::Gateway => "gateway",
        Owner::Bridge => "bridge",
        Owner::Htlc => "htlc",
        Owner::Unknown => "unknown",
    }
}

fn kind_name(k: OutputKind) -> &'static str {
    match k {
        OutputKind::ToIot => "to_iot",
        OutputKind::ToLocal => "to_local",
        OutputKind::ToRemote => "to_remote",
        OutputKind::OfferedHtlc => "offered_htlc",
        OutputKind::ReceivedHtlc => "received_htlc",
    }
}

pub fn report(r: &Report) -> String {
    let mut s = String::new();
    let t = &r.timings;
    let _ = writeln!(s, "seed {}  profile {}", r.seed, r.profile);
    let _ = writeln!(s, "open        {:.3} s", t.open_s);
    for (i, p) in t.payments_s.iter().enumerate() {
        let _ = writeln!(s, "payment {i:<3} {p:.3} s (analytic {:.3} s)", t.analytic_payment_s);
    }
    if let Some(c) = t.close_s {
        let _ = writeln!(s, "close       {c:.3} s");
    }

    let c = &r.channel;
    let _ = writeln!(s, "\nchannel {} at state {}", c.funding_txid, c.state_index);
    let mut bal = Table::new(["iot", "gateway fees", "bridge", "pending htlc", "capacity"]);
    bal.row([
        btc(c.balance_iot_sat),
        btc(c.balance_gateway_fees_sat),
        btc(c.balance_bridge_sat),
        btc(c.pending_htlc_sat),
        btc(c.capacity_sat),
    ]);
    s.push_str(&bal.render());

    if let Some(cl) = &r.closing {
        let _ = write!(s, "\nclosed by {} {}", cl.kind, cl.txid);
        if let Some(i) = cl.state_index {
            let _ = write!(s, " (state {i})");
        }
        if let Some(f) = cl.fee_sat {
            let _ = write!(s, " fee {f} sat");
        }
        s.push('\n');
        let mut outs = Table::new(["vout", "owner", "kind", "btc", "spent"]);
        for o in &cl.outputs {
            outs.row([
                o.vout.to_string(),
                owner_name(o.owner).into(),
                o.kind.map_or("-", kind_name).into(),
                btc(o.value_sat),
                yes_no(o.spent).into(),
            ]);
        }
        s.push_str(&outs.render());
    }

    if let Some(p) = &r.punishment {
        let _ = writeln!(
            s,
            "\n{} broadcast revoked state {} (watcher {})",
            p.cheater.name(),
            p.revoked_state,
            if p.watcher_enabled { "on" } else { "off" }
        );
        let mut pt = Table::new(["confirmed", "justice tx", "swept", "left to cheater", "to_IoT", "IoT only"]);
        pt.row([
            yes_no(p.revoked_confirmed).into(),
            p.justice_txid.map_or("-".into(), |t| t.to_string()),
            btc(p.swept_sat),
            btc(p.cheater_output_remaining_sat),
            btc(p.to_iot_sat),
            yes_no(p.to_iot_exclusive).into(),
        ]);
        s.push_str(&pt.render());
    }

    let b = &r.final_balances;
    let _ = writeln!(s, "\nfinal balances");
    let mut ft = Table::new(["iot", "gateway", "bridge", "htlc", "unknown", "on-chain fees"]);
    ft.row([
        btc(b.iot_sat),
        btc(b.gateway_sat),
        btc(b.bridge_sat),
        btc(b.htlc_sat),
        btc(b.unknown_sat),
        btc(b.onchain_fees_sat),
    ]);
    s.push_str(&ft.render());

    if !r.feasibility.is_empty() {
        let _ = writeln!(s, "\ntoll gate feasibility");
        let mut ft = Table::new(["speed (mph)", "window (s)", "payment (s)", "Satisfied"]);
        for f in &r.feasibility {
            ft.row([
                format!("{}", f.speed_mph),
                format!("{:.1}", f.window_s),
                format!("{:.3}", f.payment_time_s),
                yes_no(f.satisfied).into(),
            ]);
        }
        s.push_str(&ft.render());
    }

    let _ = writeln!(s, "\naudits");
    s.push_str(&audits(r));
    let _ = writeln!(s, "\n{}", if r.passed { "all audits passed" } else { "AUDIT FAILURE" });
    s
}

pub fn audits(r: &Report) -> String {
    let mut t = Table::new(["check", "result", "detail"]);
    for a in &r.audits {
        t.row([a.name.clone(), if a.passed { "ok" } else { "FAIL" }.into(), a.detail.clone()]);
    }
    t.render()
}

pub fn bench(rows: &[(BenchRow, Option<f64>)]) -> String {
    let live = rows.iter().any(|(_, l)| l.is_some());
    let mut header = vec!["profile", "speed (mph)", "range (m)", "window (s)", "payment (s)"];
    if live {
        header.push("live (s)");
    }
    header.push("Satisfied");
    let mut t = Table::new(header);
    for (r, l) in rows {
        let mut cells = vec![
            r.profile.clone(),
            format!("{}", r.speed_mph),
            format!("{}", r.range_m),
            format!("{:.1}", r.window_s),
            format!("{:.3}", r.payment_time_s),
        ];
        if live {
            cells.push(l.map_or("-".into(), |v| format!("{v:.3}")));
        }
        cells.push(yes_no(r.satisfied).into());
        t.row(cells);
    }
    t.render()
}

pub fn cost(c: &CostReport) -> String {
    let mut t = Table::new(["", "per day", "total"]);
    t.row([
        "gateway fees".to_string(),
        c.daily_gateway_fees.to_string(),
        c.gateway_fees.to_string(),
    ]);
    t.row(["paid".to_string(), c.daily_total.to_string(), c.total.to_string()]);
    format!(
        "{} passes per day, toll {}, gateway fee {}.{:02}%, {} days\n{}",
        c.passes_per_day,
        c.toll,
        c.fee_bps / 100,
        c.fee_bps % 100,
        c.days,
        t.render()
    )
}
