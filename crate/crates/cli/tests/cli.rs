use std::path::PathBuf;
use std::process::{Command, Output};

fn iotln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iotln"))
        .args(args)
        .env_remove("IOTLN_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn config_file(name: &str, body: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn bench_prints_the_toll_table() {
    let o = iotln(&["bench"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[0].ends_with("Satisfied"));
    assert!(lines[2].starts_with("wifi     50           250        11.2        2.658"));
    assert!(lines[2..].iter().all(|l| l.ends_with("Yes")));
}

#[test]
fn bench_single_speed_and_infeasible_speed() {
    let o = iotln(&["--json", "bench", "--profile", "ble", "--speed", "60", "--live"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["live_payment_time_s"].as_f64().map(|t| (t * 1000.0).round()), Some(5822.0));

    let o = iotln(&["bench", "--profile", "ble", "--speed", "100"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().last().unwrap().ends_with("No"));

    let o = iotln(&["bench", "--profile", "none"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cost_matches_the_worked_example() {
    let o = iotln(&["cost"]);
    let text = stdout(&o);
    assert!(text.contains("gateway fees  $0.30    $9.00"), "{text}");
    assert!(text.contains("paid          $3.30    $99.00"), "{text}");

    let o = iotln(&["--json", "cost", "--passes", "1", "--toll", "1", "--fee", "10%", "--days", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gateway_fees"], "$0.10");

    assert_eq!(iotln(&["cost", "--toll", "-1"]).status.code(), Some(1));
    assert_eq!(iotln(&["cost", "--help"]).status.code(), Some(0));
}

#[test]
fn reference_close_and_reports_are_deterministic() {
    let a = iotln(&["--json", "--seed", "9", "close"]);
    let b = iotln(&["--json", "--seed", "9", "close"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["final_balances"]["iot_sat"], 399_990_000);
    assert_eq!(v["final_balances"]["gateway_sat"], 10_000_000);
    assert_eq!(v["final_balances"]["bridge_sat"], 90_000_000);
    assert_eq!(v["passed"], true);
}

#[test]
fn subcommands_shape_the_config() {
    let v: serde_json::Value = serde_json::from_slice(&iotln(&["--json", "open"]).stdout).unwrap();
    assert_eq!(v["channel"]["state_index"], 0);
    assert!(v.get("closing").is_none());

    let o = iotln(&["--json", "pay", "--amount", "1000000", "--amount", "2000000"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["timings"]["payments_s"].as_array().unwrap().len(), 2);
    assert_eq!(v["channel"]["balance_gateway_fees_sat"], 300_000);

    let o = iotln(&["--json", "close", "--initiator", "bridge", "--mode", "unilateral"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["closing"]["kind"], "bridge_commitment");
}

#[test]
fn cheat_reports_punishment() {
    let o = iotln(&["--json", "pay", "--amount", "1000000", "--amount", "1000000"]);
    assert!(o.status.success());

    let cfg = config_file(
        "cheat.json",
        r#"{"capacity_sat": 100000000, "payments": [{"amount_sat": 1000000}, {"amount_sat": 2000000}]}"#,
    );
    let cfg = cfg.to_str().unwrap();
    let o = iotln(&["--json", "--config", cfg, "cheat", "--state", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(o.status.success());
    // The revoked fee output and the HTLC it still carried.
    assert_eq!(v["punishment"]["swept_sat"], 1_000_000);
    assert_eq!(v["punishment"]["to_iot_exclusive"], true);

    let o = iotln(&["--json", "--config", cfg, "cheat", "--state", "1", "--no-watcher"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["punishment"]["swept_sat"], 0);
    assert_eq!(v["punishment"]["cheater_output_remaining_sat"], 100_000);

    let o = iotln(&["cheat", "--trials", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("3 revoked broadcasts, watcher on: 3 confirmed"));
}

#[test]
fn config_errors_exit_1() {
    let bad = config_file("unknown-key.json", r#"{"capacity_sat": 1000000, "colour": "red"}"#);
    let o = Command::new(env!("CARGO_BIN_EXE_iotln"))
        .arg("open")
        .env("IOTLN_CONFIG", &bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    assert_eq!(iotln(&["--config", "/nonexistent/iotln.json", "open"]).status.code(), Some(1));
    assert_eq!(iotln(&["pay", "--amount", "600000000"]).status.code(), Some(1));
    assert_eq!(iotln(&["cheat", "--state", "5"]).status.code(), Some(1));
}

#[test]
fn protocol_errors_exit_2() {
    let cfg = config_file(
        "all-fee.json",
        r#"{"capacity_sat": 100000000, "fee_rate_permille": 1000, "payments": [{"amount_sat": 5000}]}"#,
    );
    let o = iotln(&["--config", cfg.to_str().unwrap(), "pay"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gateway"));
}

#[test]
fn audit_runs_forgery_traces_and_dumps_chain() {
    let o = iotln(&["--json", "audit", "--traces", "5", "--dump"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["forged_updates"]["traces"], 5);
    assert_eq!(v["forged_updates"]["violations"].as_array().unwrap().len(), 0);
    assert!(v["chain"]["blocks"].as_array().unwrap().len() > 1);
    assert_eq!(v["passed"], true);
}
