use iotln::harness::{bench_rows, cost_report, live_payment_time, parse_percent, Usd, SPEEDS_MPH};
use iotln::network::{
    feasible, payment_time, radio_range, toll_window, LatencyProfile, RangeModel, MPH_TO_MPS,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn analytic_payment_times() {
    for (name, expected) in [("wifi", 2.658), ("ble", 5.822), ("none", 2.100)] {
        let t = payment_time(&LatencyProfile::named(name).unwrap());
        assert!(close(t, expected, 1e-9), "{name}: {t}");
    }
}

#[test]
fn toll_gate_windows() {
    let rows = bench_rows(&["wifi", "ble"], &SPEEDS_MPH).unwrap();
    let windows: Vec<f64> = rows.iter().map(|r| (r.window_s * 10.0).round() / 10.0).collect();
    assert_eq!(windows, vec![11.2, 9.3, 7.0, 9.8, 8.2, 6.2]);
    assert!(rows.iter().all(|r| r.satisfied));
    let r = &rows[0];
    assert!(close(r.window_s, 250.0 / (50.0 * MPH_TO_MPS), 1e-12));
}

#[test]
fn infeasible_when_too_fast() {
    let range = radio_range("ble").unwrap();
    let slow = LatencyProfile::named("ble").unwrap();
    let window = toll_window(&RangeModel::from_mph(range, 80.0));
    assert!(feasible(window, payment_time(&slow)));
    let window = toll_window(&RangeModel::from_mph(range, 100.0));
    assert!(!feasible(window, payment_time(&slow)));
    assert!(bench_rows(&["none"], &SPEEDS_MPH).is_err());
    assert!(bench_rows(&["wifi"], &[0.0]).is_err());
}

#[test]
fn live_runs_match_the_model() {
    for name in ["wifi", "ble", "none"] {
        let p = LatencyProfile::named(name).unwrap();
        let analytic = payment_time(&p);
        let exact = live_payment_time(&p, None).unwrap();
        assert!(close(exact, analytic, 1e-9), "{name}: {exact} vs {analytic}");
        // Each delay moves by up to 10%, so single runs can too; the mean
        // stays close.
        let runs: Vec<f64> = (0..20)
            .map(|seed| live_payment_time(&p, Some(seed)).unwrap())
            .collect();
        for t in &runs {
            assert!((t - analytic).abs() <= 0.1 * analytic + 1e-9, "{name}: {t}");
        }
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        assert!((mean - analytic).abs() <= 0.05 * analytic, "{name}: mean {mean}");
    }
}

#[test]
fn custom_profile_scales() {
    let p = LatencyProfile {
        iot_link_rtt: 0.1,
        cloud_rtt: 0.2,
        ln_settle: 1.0,
        iot_compute_per_msg: 0.05,
        exchanges: 4,
        iot_messages: 2,
    };
    assert!(close(payment_time(&p), 1.0 + 4.0 * 0.3 + 2.0 * 0.05, 1e-12));
    assert!(close(live_payment_time(&p, None).unwrap(), payment_time(&p), 1e-9));
}

#[test]
fn toll_costs() {
    let r = cost_report(2, "1.5".parse().unwrap(), parse_percent("10").unwrap(), 30);
    assert_eq!(r.gateway_fees, Usd(9_000_000));
    assert_eq!(r.daily_total, Usd(3_300_000));
    assert_eq!(r.gateway_fees.to_string(), "$9.00");
    assert_eq!(r.daily_total.to_string(), "$3.30");
    assert_eq!(r.total, Usd(99_000_000));
    let zero = cost_report(2, Usd(1_500_000), 0, 30);
    assert_eq!(zero.gateway_fees, Usd(0));
    assert_eq!(zero.daily_total, Usd(3_000_000));
    let one = cost_report(1, Usd(1_000_000), 1000, 1);
    assert_eq!(one.gateway_fees.to_string(), "$0.10");
}
