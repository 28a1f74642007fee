//! `iotln`: runs channel scenarios on the simulated chain and prints timing
//! tables, cost reports and audits.

// Stdout writes that treat a closed pipe as done rather than panicking.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}
macro_rules! outln {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

mod render;
mod table;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use iotln::harness::{
    bench_rows, cost_report, live_payment_time, parse_percent, run_cheat_trial, run_scenario_world,
    run_forgery_trace, CheatSpec, CloseSpec, PaymentSpec, ScenarioConfig, ScenarioError,
    ForgeryTemplate, Usd, SPEEDS_MPH,
};
use iotln::network::LatencyProfile;
use iotln::protocol::{CloseMode, Role};
use iotln::script::oracle;

#[derive(Parser)]
#[command(name = "iotln", version, about = "Three-party IoT payment channel simulator")]
struct Cli {
    /// Scenario config (JSON). Defaults to open 5 BTC, pay 1 BTC at 10%.
    #[arg(long, global = true, env = "IOTLN_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fund the channel and wait for it to become operational.
    Open,
    /// Open, then make the configured payments.
    Pay {
        /// Payment amount in satoshi; repeat for several payments. Replaces
        /// the config's payments.
        #[arg(long = "amount")]
        amounts: Vec<u64>,
    },
    /// Open, pay, then close the channel.
    Close {
        #[arg(long)]
        initiator: Option<RoleArg>,
        #[arg(long)]
        mode: Option<ModeArg>,
        /// The gateway's opening closing-fee offer in satoshi.
        #[arg(long)]
        fee: Option<u64>,
    },
    /// Broadcast a revoked commitment and watch the response.
    Cheat {
        #[arg(long)]
        role: Option<CheaterArg>,
        /// Revoked state to broadcast.
        #[arg(long)]
        state: Option<u64>,
        #[arg(long)]
        no_watcher: bool,
        /// Run this many randomized gateway cheats instead, seeded from --seed.
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Toll-gate windows against payment time.
    Bench {
        /// `wifi` or `ble`; repeatable. Defaults to both.
        #[arg(long = "profile")]
        profiles: Vec<String>,
        /// Vehicle speed in mph; repeatable. Defaults to 50, 60 and 80.
        #[arg(long = "speed")]
        speeds: Vec<f64>,
        /// Also time a real payment over the delay-injecting bus.
        #[arg(long)]
        live: bool,
        /// Every profile and speed, live, one thread per profile.
        #[arg(long)]
        matrix: bool,
        /// Add random jitter to live runs, seeded from --seed.
        #[arg(long)]
        jitter: bool,
    },
    /// What a vehicle pays in tolls and gateway fees.
    Cost {
        #[arg(long, default_value_t = 2)]
        passes: u64,
        /// Toll per pass in dollars.
        #[arg(long, default_value = "1.5")]
        toll: Usd,
        /// Gateway fee in percent.
        #[arg(long, default_value = "10", value_parser = parse_percent)]
        fee: u32,
        #[arg(long, default_value_t = 30)]
        days: u64,
    },
    /// Run the configured scenario and report its audits.
    Audit {
        /// Include the chain's blocks, UTXOs and validation trace.
        #[arg(long)]
        dump: bool,
        /// Also fuzz this many traces of a gateway forging bridge updates.
        #[arg(long)]
        traces: Option<u64>,
        /// Also check every script template against its truth table.
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Iot,
    Gateway,
    Bridge,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheaterArg {
    Gateway,
    Bridge,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mutual,
    Unilateral,
}

enum Failure {
    Config(String),
    Protocol(String),
    Audit,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Failure {
        match e {
            ScenarioError::Config(m) => Failure::Config(m),
            e => Failure::Protocol(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments are configuration errors; help and version are not.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("iotln: config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Protocol(m)) => {
            eprintln!("iotln: protocol error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Audit) => {
            eprintln!("iotln: audit failed");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    match &cli.config {
        None => Ok(ScenarioConfig::reference()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            Ok(ScenarioConfig::from_json(&text)?)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Bench {
            profiles,
            speeds,
            live,
            matrix,
            jitter,
        } => bench(cli, profiles, speeds, *live || *matrix, *matrix, *jitter),
        Command::Cost {
            passes,
            toll,
            fee,
            days,
        } => {
            let r = cost_report(*passes, *toll, *fee, *days);
            if cli.json {
                outln!("{}", serde_json::to_string_pretty(&r).expect("serializes"));
            } else {
                out!("{}", render::cost(&r));
            }
            Ok(())
        }
        Command::Cheat {
            trials: Some(n), ..
        } => cheat_trials(cli, *n),
        Command::Audit { dump, traces, oracle } => {
            let cfg = load_config(cli)?;
            audit(cli, &cfg, *dump, *traces, *oracle)
        }
        cmd => {
            let mut cfg = load_config(cli)?;
            shape(&mut cfg, cmd);
            cfg.validate()?;
            scenario(cli, &cfg)
        }
    }
}

/// Trims or extends the config to what a scenario subcommand covers.
fn shape(cfg: &mut ScenarioConfig, cmd: &Command) {
    match cmd {
        Command::Open => {
            cfg.payments.clear();
            cfg.close = None;
            cfg.cheat = None;
            cfg.bridge_offline_at_payment = None;
        }
        Command::Pay { amounts } => {
            if !amounts.is_empty() {
                cfg.payments = amounts
                    .iter()
                    .map(|&amount_sat| PaymentSpec {
                        amount_sat,
                        destination: None,
                    })
                    .collect();
            }
            cfg.close = None;
            cfg.cheat = None;
        }
        Command::Close {
            initiator,
            mode,
            fee,
        } => {
            cfg.cheat = None;
            let c = cfg.close.get_or_insert(CloseSpec {
                initiator: Role::Iot,
                mode: CloseMode::Mutual,
                fee_sat: 10_000,
                bridge_fee_sat: None,
            });
            if let Some(i) = initiator {
                c.initiator = match i {
                    RoleArg::Iot => Role::Iot,
                    RoleArg::Gateway => Role::Gateway,
                    RoleArg::Bridge => Role::Bridge,
                };
            }
            if let Some(m) = mode {
                c.mode = match m {
                    ModeArg::Mutual => CloseMode::Mutual,
                    ModeArg::Unilateral => CloseMode::Unilateral,
                };
            }
            if let Some(f) = fee {
                c.fee_sat = *f;
            }
        }
        Command::Cheat {
            role,
            state,
            no_watcher,
            ..
        } => {
            cfg.close = None;
            cfg.bridge_offline_at_payment = None;
            let c = cfg.cheat.get_or_insert(CheatSpec {
                role: Role::Gateway,
                state_index: 0,
                watcher_enabled: true,
            });
            if let Some(r) = role {
                c.role = match r {
                    CheaterArg::Gateway => Role::Gateway,
                    CheaterArg::Bridge => Role::Bridge,
                };
            }
            if let Some(s) = state {
                c.state_index = *s;
            }
            if *no_watcher {
                c.watcher_enabled = false;
            }
        }
        _ => {}
    }
}

fn scenario(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), Failure> {
    let (report, _) = run_scenario_world(cfg, cli.seed)?;
    if cli.json {
        outln!("{}", report.to_json());
    } else {
        out!("{}", render::report(&report));
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn audit(
    cli: &Cli,
    cfg: &ScenarioConfig,
    dump: bool,
    traces: Option<u64>,
    run_oracle: bool,
) -> Result<(), Failure> {
    let (report, world) = run_scenario_world(cfg, cli.seed)?;
    let mut passed = report.passed;
    let mut out = json!({
        "seed": report.seed,
        "chain_audit": report.chain_audit,
        "audits": report.audits,
        "passed": report.passed,
    });
    let mut text = render::audits(&report);

    if let Some(n) = traces {
        let template = ForgeryTemplate::new()?;
        let (mut revocations, mut rejected, mut violations) = (0, 0, Vec::new());
        for i in 0..n {
            let seed = cli.seed.wrapping_add(i);
            let o = run_forgery_trace(&template, seed, 60);
            revocations += o.revocations;
            rejected += o.rejected;
            violations.extend(o.violations.into_iter().map(|v| format!("seed {seed}: {v}")));
        }
        passed &= violations.is_empty();
        text.push_str(&format!(
            "\n{n} forged-update traces: {revocations} revocations, {rejected} rejected inputs, {} violations\n",
            violations.len()
        ));
        for v in violations.iter().take(10) {
            text.push_str(&format!("  {v}\n"));
        }
        out["forged_updates"] = json!({
            "traces": n,
            "revocations": revocations,
            "rejected": rejected,
            "violations": violations,
        });
    }

    if run_oracle {
        let started = Instant::now();
        let reports = oracle::check_all(oracle::MAX_DEPTH);
        let elapsed = started.elapsed().as_secs_f64();
        let mut t = table::Table::new(["template", "stacks", "accepted", "divergences"]);
        for r in &reports {
            passed &= r.divergences == 0;
            t.row([
                r.template.to_string(),
                r.stacks.to_string(),
                r.accepted.to_string(),
                r.divergences.to_string(),
            ]);
        }
        text.push_str(&format!("\nscript oracle, depth {} ({elapsed:.1} s)\n", oracle::MAX_DEPTH));
        text.push_str(&t.render());
        out["script_oracle"] = json!(reports);
    }

    if dump {
        out["chain"] = world.chain.dump();
        text.push_str(&format!(
            "\n{}\n",
            serde_json::to_string_pretty(&world.chain.dump()).expect("serializes")
        ));
    }

    out["passed"] = json!(passed);
    if cli.json {
        outln!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    } else {
        out!("{text}");
        outln!("\n{}", if passed { "all audits passed" } else { "AUDIT FAILURE" });
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn cheat_trials(cli: &Cli, n: u64) -> Result<(), Failure> {
    let watcher = !matches!(cli.command, Command::Cheat { no_watcher: true, .. });
    let mut failed = Vec::new();
    let (mut swept, mut confirmed) = (0u64, 0u64);
    for i in 0..n {
        let seed = cli.seed.wrapping_add(i);
        let t = run_cheat_trial(seed, watcher)?;
        if let Some(p) = &t.report.punishment {
            swept += p.swept_sat;
            confirmed += u64::from(p.revoked_confirmed);
        }
        if !t.report.passed {
            failed.push(seed);
        }
    }
    if cli.json {
        let v = json!({
            "trials": n,
            "watcher_enabled": watcher,
            "revoked_confirmed": confirmed,
            "swept_sat": swept,
            "failed_seeds": failed,
        });
        outln!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
    } else {
        outln!(
            "{n} revoked broadcasts, watcher {}: {confirmed} confirmed, {} swept, {} failed",
            if watcher { "on" } else { "off" },
            render::btc(swept),
            failed.len()
        );
        for s in failed.iter().take(10) {
            outln!("  failed seed {s}");
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn bench(
    cli: &Cli,
    profiles: &[String],
    speeds: &[f64],
    live: bool,
    parallel: bool,
    jitter: bool,
) -> Result<(), Failure> {
    let profiles: Vec<&str> = if profiles.is_empty() {
        vec!["wifi", "ble"]
    } else {
        profiles.iter().map(String::as_str).collect()
    };
    let speeds = if speeds.is_empty() {
        SPEEDS_MPH.to_vec()
    } else {
        speeds.to_vec()
    };
    let rows = bench_rows(&profiles, &speeds).map_err(|e| Failure::Config(e.to_string()))?;

    let jitter_seed = jitter.then_some(cli.seed);
    let time_live = |name: &str| -> Result<f64, Failure> {
        let p = LatencyProfile::named(name).map_err(|e| Failure::Config(e.to_string()))?;
        Ok(live_payment_time(&p, jitter_seed)?)
    };
    let mut live_times: Vec<(&str, f64)> = Vec::new();
    if live {
        if parallel {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = profiles
                    .iter()
                    .map(|&name| s.spawn(move || (name, time_live(name))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("bench thread")).collect()
            });
            for (name, t) in results {
                live_times.push((name, t?));
            }
        } else {
            for &name in &profiles {
                live_times.push((name, time_live(name)?));
            }
        }
    }
    let rows: Vec<_> = rows
        .into_iter()
        .map(|r| {
            let l = live_times.iter().find(|(n, _)| *n == r.profile).map(|(_, t)| *t);
            (r, l)
        })
        .collect();

    if cli.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(r, l)| {
                let mut v = json!(r);
                if let Some(l) = l {
                    v["live_payment_time_s"] = json!(l);
                }
                v
            })
            .collect();
        outln!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
    } else {
        out!("{}", render::bench(&rows));
    }
    Ok(())
}
