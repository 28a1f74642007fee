use crate::crypto::{Digest, KeyPair, PublicKey};
use crate::script::{
    delayed_witness, eval_spend, htlc_revocation_witness, p2pk_script, p2pk_witness,
    revocation_witness, EcdsaChecker, Script, SpendContext, Witness,
};
use crate::tx::{sighash, OutPoint, Tx, TxIn, TxOut, SEQUENCE_FINAL};

use super::World;

fn spend_digest(script: &Script, value: u64, to: &PublicKey) -> Digest {
    let tx = Tx {
        version: 2,
        inputs: vec![TxIn {
            outpoint: OutPoint::new(Digest::sha256(b"probe"), 0),
            sequence: SEQUENCE_FINAL,
        }],
        outputs: vec![TxOut {
            value,
            script: p2pk_script(to),
        }],
        witnesses: vec![Witness::default()],
        locktime: 0,
    };
    sighash(&tx, 0, script, value).expect("one input")
}

fn spends(script: &Script, witness: &Witness, digest: Digest) -> bool {
    // Old enough and late enough for every timelock branch.
    let ctx = SpendContext {
        sighash: digest,
        current_height: u32::MAX >> 1,
        input_age: u32::MAX >> 1,
    };
    eval_spend(script, witness.items(), &ctx, &EcdsaChecker).is_ok()
}

/// True if `owner` can spend an output locked by `script` and no other key
/// in the world can, whatever witness shape it tries. The candidates are
/// every key both nodes hold, every revocation key revealed so far and the
/// device's other keys.
pub fn spendable_only_by(world: &World, script: &Script, value: u64, owner: &KeyPair) -> bool {
    let d = spend_digest(script, value, &owner.public);
    if !spends(script, &p2pk_witness(&owner.sign(&d)), d) {
        return false;
    }
    let mut others: Vec<KeyPair> = Vec::new();
    for s in [world.gateway.secrets(), world.bridge.secrets()] {
        others.extend([
            s.funding.clone(),
            s.payment.clone(),
            s.delayed.clone(),
            s.htlc.clone(),
            s.revocation_base.clone(),
        ]);
    }
    let iot = world.iot.secrets();
    others.extend([iot.funding.clone(), iot.delayed.clone(), iot.htlc.clone()]);
    for e in world.watch_entries() {
        for r in e.revoked.values() {
            others.push(KeyPair::from_secret(r.revocation_key.clone()));
        }
    }
    others.retain(|k| k.public != owner.public);
    others.iter().all(|k| {
        let sig = k.sign(&d);
        [
            p2pk_witness(&sig),
            revocation_witness(&sig),
            delayed_witness(&sig),
            htlc_revocation_witness(&sig, &k.public),
        ]
        .iter()
        .all(|w| !spends(script, w, d))
    })
}
