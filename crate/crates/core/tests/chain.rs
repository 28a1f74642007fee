mod common;

use common::Fixture;
use iotln::chain::{Rejected, SimChain};
use iotln::crypto::{derive_keypair, Digest, KeyPair};
use iotln::script::{delayed_witness, multisig_witness, p2pk_script, OutputKind, Witness};
use iotln::tx::{funding_sighash, sighash, OutPoint, Tx, TxIn, TxOut, COIN, SEQUENCE_FINAL};
use proptest::prelude::*;

/// A funded channel whose funding output exists on `chain`.
fn funded() -> (Fixture, SimChain) {
    let mut f = Fixture::reference();
    let mut chain = SimChain::new();
    f.funding = chain.mint(f.params.capacity_sat, f.params.funding_script().unwrap());
    (f, chain)
}

fn signed(f: &Fixture, tx: &Tx, signers: &[&KeyPair]) -> Tx {
    let d = funding_sighash(tx, &f.params).unwrap();
    let mut tx = tx.clone();
    tx.witnesses[0] = multisig_witness(signers.iter().map(|k| (k.public, k.sign(&d))).collect());
    tx
}

fn sweep(from: OutPoint, value: u64, to: &KeyPair) -> Tx {
    Tx {
        version: 2,
        inputs: vec![TxIn {
            outpoint: from,
            sequence: SEQUENCE_FINAL,
        }],
        outputs: vec![TxOut {
            value,
            script: p2pk_script(&to.public),
        }],
        witnesses: vec![Witness::default()],
        locktime: 0,
    }
}

#[test]
fn commitment_needs_three_signatures_on_chain() {
    let (f, mut chain) = funded();
    let (gw, _) = f.commitments(&f.pay(&f.initial(), COIN));
    for pair in [
        [&f.gw.funding, &f.br.funding],
        [&f.iot.funding, &f.gw.funding],
        [&f.iot.funding, &f.br.funding],
    ] {
        let two = signed(&f, &gw.tx, &pair);
        assert!(matches!(chain.broadcast(two), Err(Rejected::ScriptFailed { input: 0, .. })));
    }
    let all = signed(&f, &gw.tx, &[&f.iot.funding, &f.gw.funding, &f.br.funding]);
    let txid = chain.broadcast(all).unwrap();
    chain.mine_blocks(3).unwrap();
    assert_eq!(chain.confirmations(&txid), 3);
}

#[test]
fn both_commitments_cannot_confirm() {
    let (f, mut chain) = funded();
    let (gw, br) = f.commitments(&f.pay(&f.initial(), COIN));
    let keys = [&f.iot.funding, &f.gw.funding, &f.br.funding];
    chain.broadcast(signed(&f, &gw.tx, &keys)).unwrap();
    let second = signed(&f, &br.tx, &keys);
    assert!(matches!(chain.broadcast(second.clone()), Err(Rejected::Doublespend { .. })));
    chain.mine_blocks(1).unwrap();
    assert!(matches!(chain.broadcast(second), Err(Rejected::Doublespend { .. })));
    let audit = chain.audit().unwrap();
    assert_eq!(audit.utxo_value_sat + audit.fees_sat, audit.minted_sat);
}

#[test]
fn delayed_output_waits_for_csv() {
    let (f, mut chain) = funded();
    let (gw, _) = f.commitments(&f.pay(&f.initial(), COIN));
    let keys = [&f.iot.funding, &f.gw.funding, &f.br.funding];
    let txid = chain.broadcast(signed(&f, &gw.tx, &keys)).unwrap();
    chain.mine_blocks(1).unwrap();

    let vout = gw.find(OutputKind::ToLocal).unwrap();
    let out = &gw.tx.outputs[vout as usize];
    let mut tx = sweep(OutPoint::new(txid, vout), out.value, &f.gw.payment);
    let d = sighash(&tx, 0, &out.script, out.value).unwrap();
    tx.witnesses[0] = delayed_witness(&f.gw.delayed.sign(&d));

    let csv = f.params.csv_delay as u32;
    // The confirming block counts as age 1.
    chain.mine_blocks(csv - 2).unwrap();
    assert!(matches!(chain.broadcast(tx.clone()), Err(Rejected::TimelockNotMet { .. })));
    chain.mine_blocks(1).unwrap();
    chain.broadcast(tx).unwrap();
    chain.mine_blocks(1).unwrap();
    chain.audit().unwrap();
}

#[test]
fn unconfirmed_outputs_cannot_be_spent() {
    let k = derive_keypair(b"k", "a");
    let mut chain = SimChain::new();
    let coin = chain.mint(1_000, p2pk_script(&k.public));
    let mut a = sweep(coin, 900, &k);
    let d = sighash(&a, 0, &p2pk_script(&k.public), 1_000).unwrap();
    a.witnesses[0] = iotln::script::p2pk_witness(&k.sign(&d));
    let a_id = chain.broadcast(a).unwrap();
    let child = sweep(OutPoint::new(a_id, 0), 800, &k);
    assert!(matches!(chain.broadcast(child), Err(Rejected::MissingInput { .. })));
    let empty = Tx {
        inputs: Vec::new(),
        ..sweep(coin, 1, &k)
    };
    assert!(matches!(chain.broadcast(empty), Err(Rejected::Malformed)));
}

fn arb_tx() -> impl Strategy<Value = Tx> {
    let input = (any::<[u8; 32]>(), 0u32..4, any::<u32>()).prop_map(|(h, vout, sequence)| TxIn {
        outpoint: OutPoint::new(Digest(h), vout),
        sequence,
    });
    let output = (0u64..21_000_000 * COIN, prop::collection::vec(any::<u8>(), 0..40))
        .prop_map(|(value, bytes)| TxOut {
            value,
            script: p2pk_script(&derive_keypair(&bytes, "out").public),
        });
    (
        prop::collection::vec(input, 1..4),
        prop::collection::vec(output, 1..3),
        any::<u32>(),
    )
        .prop_flat_map(|(inputs, outputs, locktime)| {
            let n = inputs.len();
            prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<u8>(), 0..80), 0..5), n)
                .prop_map(move |w| Tx {
                    version: 2,
                    inputs: inputs.clone(),
                    outputs: outputs.clone(),
                    witnesses: w.into_iter().map(Witness::new).collect(),
                    locktime,
                })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn txid_ignores_witness(tx in arb_tx(), other in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..80), 0..5), which in any::<prop::sample::Index>()) {
        let mut mutated = tx.clone();
        let i = which.index(tx.inputs.len());
        mutated.witnesses[i] = Witness::new(other);
        prop_assert_eq!(mutated.txid(), tx.txid());
        prop_assert_eq!(Tx::from_bytes(&tx.to_bytes()).unwrap(), tx.clone());
        if mutated.witnesses != tx.witnesses {
            prop_assert_ne!(mutated.to_bytes(), tx.to_bytes());
        }
    }
}
