use criterion::{black_box, criterion_group, criterion_main, Criterion};

use iotln::crypto::{derive_keypair, verify, Digest};
use iotln::harness::{
    build_world, open_channel, pay, run_scenario, run_forgery_trace, toll_gate_node,
    ScenarioConfig, ForgeryTemplate,
};
use iotln::script::{oracle, Side};
use iotln::tx::{build_commitment_tx, funding_sighash, COIN};

fn crypto(c: &mut Criterion) {
    let key = derive_keypair(b"bench", "funding");
    let digest = Digest::sha256(b"commitment");
    let sig = key.sign(&digest);
    c.bench_function("ecdsa_sign", |b| b.iter(|| key.sign(black_box(&digest))));
    c.bench_function("ecdsa_verify", |b| {
        b.iter(|| verify(sig.as_bytes(), key.public.as_bytes(), black_box(&digest)))
    });
}

fn commitments(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::reference();
    cfg.close = None;
    let mut w = build_world(&cfg, 0).unwrap();
    open_channel(&mut w, cfg.capacity_sat).unwrap();
    pay(&mut w, COIN, toll_gate_node()).unwrap();
    let snap = w.gateway.snapshot().unwrap().clone();
    let params = w.gateway.params().unwrap().clone();
    let funding = w.funding_outpoint().unwrap();
    c.bench_function("build_commitment", |b| {
        b.iter(|| build_commitment_tx(Side::Gateway, black_box(&snap), &params, funding).unwrap())
    });
    let tx = build_commitment_tx(Side::Gateway, &snap, &params, funding).unwrap().tx;
    c.bench_function("funding_sighash", |b| {
        b.iter(|| funding_sighash(black_box(&tx), &params).unwrap())
    });
}

fn scenarios(c: &mut Criterion) {
    let cfg = ScenarioConfig::reference();
    c.bench_function("reference_scenario", |b| b.iter(|| run_scenario(black_box(&cfg), 0).unwrap()));
    let template = ForgeryTemplate::new().unwrap();
    let mut seed = 0;
    c.bench_function("forged_update_trace", |b| {
        b.iter(|| {
            seed += 1;
            run_forgery_trace(&template, seed, 60)
        })
    });
}

fn script_oracle(c: &mut Criterion) {
    let keys = oracle::ToyKeys::new();
    let templates = oracle::templates(&keys);
    let mut g = c.benchmark_group("script_oracle");
    g.sample_size(10);
    for t in &templates {
        g.bench_function(t.name, |b| b.iter(|| oracle::check_template(t, &keys, 4)));
    }
    g.finish();
}

criterion_group!(benches, crypto, commitments, scenarios, script_oracle);
criterion_main!(benches);
