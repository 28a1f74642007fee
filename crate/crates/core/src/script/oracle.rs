//! Exhaustive cross-check of the script templates.
//!
//! Signatures come from a toy 8-bit scheme, so every witness stack up to a
//! fixed depth over a small alphabet can be run through the interpreter. The
//! result is compared with a truth table written out by hand for each
//! template.

use std::collections::HashMap;

use serde::Serialize;

use super::{
    eval_spend, funding_script, offered_htlc_script, p2pk_script, received_htlc_script,
    revocable_delayed_script, two_party_funding_script, EvalError, Script, SpendContext,
};
use crate::crypto::{derive_keypair, sha256, Digest, PublicKey};

/// Deepest witness stack enumerated.
pub const MAX_DEPTH: usize = 6;

const CSV: u16 = 144;
const CLTV: u32 = 500;
const PREIMAGE: [u8; 32] = [0x5a; 32];
const WRONG_PREIMAGE: [u8; 32] = [0xa5; 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKey {
    Iot,
    Gateway,
    Bridge,
    Revocation,
    Delayed,
    Remote,
    Local,
    IotHtlc,
}

const ALL_KEYS: [ToyKey; 8] = [
    ToyKey::Iot,
    ToyKey::Gateway,
    ToyKey::Bridge,
    ToyKey::Revocation,
    ToyKey::Delayed,
    ToyKey::Remote,
    ToyKey::Local,
    ToyKey::IotHtlc,
];

/// One witness item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sym {
    Sig(ToyKey),
    BadSig,
    Empty,
    One,
    Preimage,
    WrongPreimage,
    RevocationPubkey,
}

/// Whether a satisfying stack needs its timelock to have passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum When {
    Always,
    AfterTimelock,
}

/// Keys with distinct 8-bit tags. A toy signature for a key is 64 copies of
/// its tag.
pub struct ToyKeys {
    keys: HashMap<ToyKey, PublicKey>,
    tags: HashMap<Vec<u8>, u8>,
    bad_tag: u8,
}

impl ToyKeys {
    pub fn new() -> ToyKeys {
        let mut keys = HashMap::new();
        let mut tags = HashMap::new();
        for k in ALL_KEYS {
            let mut n = 0u32;
            loop {
                let pk = derive_keypair(b"toy-oracle", &format!("{k:?}/{n}")).public;
                let tag = toy_tag(&pk);
                if !tags.values().any(|t| *t == tag) {
                    tags.insert(pk.as_bytes().to_vec(), tag);
                    keys.insert(k, pk);
                    break;
                }
                n += 1;
            }
        }
        let bad_tag = (0..=255u8)
            .find(|b| !tags.values().any(|t| t == b))
            .expect("eight keys leave free tags");
        ToyKeys {
            keys,
            tags,
            bad_tag,
        }
    }

    pub fn public(&self, k: ToyKey) -> PublicKey {
        self.keys[&k]
    }

    pub fn bytes(&self, s: Sym) -> Vec<u8> {
        match s {
            Sym::Sig(k) => vec![toy_tag(&self.keys[&k]); 64],
            Sym::BadSig => vec![self.bad_tag; 64],
            Sym::Empty => Vec::new(),
            Sym::One => vec![1],
            Sym::Preimage => PREIMAGE.to_vec(),
            Sym::WrongPreimage => WRONG_PREIMAGE.to_vec(),
            Sym::RevocationPubkey => self.keys[&ToyKey::Revocation].as_bytes().to_vec(),
        }
    }

    /// The toy verifier: `sig` must be 64 copies of the key's tag.
    pub fn check(&self, sig: &[u8], pubkey: &[u8], _: &Digest) -> bool {
        match self.tags.get(pubkey) {
            Some(&t) => sig.len() == 64 && sig.iter().all(|b| *b == t),
            None => false,
        }
    }
}

impl Default for ToyKeys {
    fn default() -> Self {
        ToyKeys::new()
    }
}

fn toy_tag(pk: &PublicKey) -> u8 {
    sha256(pk.as_bytes())[0]
}

/// A satisfying stack shape: the set of items allowed at each position,
/// bottom to top.
#[derive(Clone, Debug, Serialize)]
pub struct Pattern {
    pub when: When,
    pub items: Vec<Vec<Sym>>,
}

impl Pattern {
    fn exact(when: When, items: &[Sym]) -> Pattern {
        Pattern {
            when,
            items: items.iter().map(|s| vec![*s]).collect(),
        }
    }

    fn matches(&self, stack: &[Sym], timelock_passed: bool) -> bool {
        (self.when == When::Always || timelock_passed)
            && stack.len() == self.items.len()
            && stack.iter().zip(&self.items).all(|(s, allowed)| allowed.contains(s))
    }
}

pub struct Template {
    pub name: &'static str,
    pub script: Script,
    pub alphabet: Vec<Sym>,
    pub truth_table: Vec<Pattern>,
}

impl Template {
    pub fn expected(&self, stack: &[Sym], timelock_passed: bool) -> bool {
        self.truth_table
            .iter()
            .any(|p| p.matches(stack, timelock_passed))
    }
}

fn alphabet(keys: &[ToyKey], extra: &[Sym]) -> Vec<Sym> {
    let mut a: Vec<Sym> = keys.iter().map(|k| Sym::Sig(*k)).collect();
    a.extend([Sym::BadSig, Sym::Empty, Sym::One, Sym::WrongPreimage]);
    a.extend(extra);
    a
}

/// Every channel script template with its hand-written truth table.
pub fn templates(k: &ToyKeys) -> Vec<Template> {
    use Sym::*;
    use ToyKey::*;
    let pk = |x| k.public(x);
    let hash = sha256(&PREIMAGE);

    // Multisig signatures follow the lexicographic key order.
    let sorted = |mut ks: Vec<ToyKey>| {
        ks.sort_by_key(|x| pk(*x));
        ks
    };
    let funding_order = sorted(vec![Iot, Gateway, Bridge]);
    let pair_order = sorted(vec![Gateway, Bridge]);

    let htlc_keys = [Revocation, Remote, Local, IotHtlc];
    let htlc_extra = [Preimage, RevocationPubkey];
    // Anything that is neither 32 bytes long nor the revocation key.
    let short: Vec<Sym> = htlc_keys
        .iter()
        .map(|x| Sig(*x))
        .chain([BadSig, Empty, One])
        .collect();

    vec![
        Template {
            name: "p2pk",
            script: p2pk_script(&pk(Iot)),
            alphabet: alphabet(&[Iot, Gateway], &[]),
            truth_table: vec![Pattern::exact(When::Always, &[Sig(Iot)])],
        },
        Template {
            name: "funding_3_of_3",
            script: funding_script(&pk(Iot), &pk(Gateway), &pk(Bridge)).expect("distinct keys"),
            alphabet: alphabet(&[Iot, Gateway, Bridge], &[]),
            truth_table: vec![Pattern::exact(
                When::Always,
                &[
                    Empty,
                    Sig(funding_order[0]),
                    Sig(funding_order[1]),
                    Sig(funding_order[2]),
                ],
            )],
        },
        Template {
            name: "funding_2_of_2",
            script: two_party_funding_script(&pk(Gateway), &pk(Bridge)).expect("distinct keys"),
            alphabet: alphabet(&[Iot, Gateway, Bridge], &[]),
            truth_table: vec![Pattern::exact(
                When::Always,
                &[Empty, Sig(pair_order[0]), Sig(pair_order[1])],
            )],
        },
        Template {
            name: "revocable_delayed",
            script: revocable_delayed_script(&pk(Revocation), CSV, &pk(Delayed)),
            alphabet: alphabet(&[Revocation, Delayed], &[]),
            truth_table: vec![
                Pattern::exact(When::Always, &[Sig(Revocation), One]),
                Pattern::exact(When::AfterTimelock, &[Sig(Delayed), Empty]),
            ],
        },
        Template {
            name: "offered_htlc",
            script: offered_htlc_script(&pk(Revocation), &pk(Remote), &pk(Local), &pk(IotHtlc), &hash),
            alphabet: alphabet(&htlc_keys, &htlc_extra),
            truth_table: vec![
                Pattern::exact(When::Always, &[Sig(Revocation), RevocationPubkey]),
                Pattern::exact(When::Always, &[Sig(Remote), Preimage]),
                Pattern {
                    when: When::Always,
                    items: vec![
                        vec![Empty],
                        vec![Sig(Remote)],
                        vec![Sig(Local)],
                        vec![Sig(IotHtlc)],
                        short.clone(),
                    ],
                },
            ],
        },
        Template {
            name: "received_htlc",
            script: received_htlc_script(
                &pk(Revocation),
                &pk(Remote),
                &pk(Local),
                &pk(IotHtlc),
                &hash,
                CLTV,
            ),
            alphabet: alphabet(&htlc_keys, &htlc_extra),
            truth_table: vec![
                Pattern::exact(When::Always, &[Sig(Revocation), RevocationPubkey]),
                Pattern::exact(
                    When::Always,
                    &[Empty, Sig(Remote), Sig(IotHtlc), Sig(Local), Preimage],
                ),
                Pattern {
                    when: When::AfterTimelock,
                    items: vec![vec![Sig(Remote)], short],
                },
            ],
        },
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct Divergence {
    pub stack: Vec<Sym>,
    pub timelock_passed: bool,
    pub expected: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub template: &'static str,
    pub stacks: u64,
    /// Stacks accepted with the timelock passed.
    pub accepted: u64,
    pub divergences: u64,
    /// The first few divergences, for diagnosis.
    pub examples: Vec<Divergence>,
}

/// Runs every stack of up to `max_depth` items over the template's alphabet,
/// both before and after its timelock, and compares with the truth table.
pub fn check_template(t: &Template, keys: &ToyKeys, max_depth: usize) -> OracleReport {
    let bytes: Vec<Vec<u8>> = t.alphabet.iter().map(|s| keys.bytes(*s)).collect();
    let contexts = [
        (
            false,
            SpendContext {
                sighash: Digest([0; 32]),
                current_height: CLTV - 1,
                input_age: CSV as u32 - 1,
            },
        ),
        (
            true,
            SpendContext {
                sighash: Digest([0; 32]),
                current_height: CLTV,
                input_age: CSV as u32,
            },
        ),
    ];
    let checker = |s: &[u8], p: &[u8], d: &Digest| keys.check(s, p, d);
    let mut report = OracleReport {
        template: t.name,
        stacks: 0,
        accepted: 0,
        divergences: 0,
        examples: Vec::new(),
    };
    let n = t.alphabet.len();
    let mut witness: Vec<Vec<u8>> = Vec::with_capacity(max_depth);
    let mut stack: Vec<Sym> = Vec::with_capacity(max_depth);
    for depth in 0..=max_depth {
        let mut idx = vec![0usize; depth];
        loop {
            witness.clear();
            stack.clear();
            for &i in &idx {
                witness.push(bytes[i].clone());
                stack.push(t.alphabet[i]);
            }
            report.stacks += 1;
            for (passed, ctx) in &contexts {
                let found = eval_spend(&t.script, &witness, ctx, &checker);
                let expected = t.expected(&stack, *passed);
                if *passed && found.is_ok() {
                    report.accepted += 1;
                }
                if found.is_ok() != expected {
                    report.divergences += 1;
                    if report.examples.len() < 10 {
                        report.examples.push(Divergence {
                            stack: stack.clone(),
                            timelock_passed: *passed,
                            expected,
                            error: found.err().map(|e: EvalError| e.to_string()),
                        });
                    }
                }
            }
            // Odometer over alphabet indices.
            let mut pos = 0;
            while pos < depth {
                idx[pos] += 1;
                if idx[pos] < n {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == depth {
                break;
            }
        }
    }
    report
}

pub fn check_all(max_depth: usize) -> Vec<OracleReport> {
    let keys = ToyKeys::new();
    templates(&keys)
        .iter()
        .map(|t| check_template(t, &keys, max_depth))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_scheme_has_no_forgeries() {
        let keys = ToyKeys::new();
        let d = Digest([0; 32]);
        for k in ALL_KEYS {
            let pk = keys.public(k);
            let valid: Vec<u8> = (0..=255u8)
                .filter(|b| keys.check(&[*b; 64], pk.as_bytes(), &d))
                .collect();
            assert_eq!(valid.len(), 1);
            assert!(!keys.check(&keys.bytes(Sym::BadSig), pk.as_bytes(), &d));
        }
    }

    #[test]
    fn shallow_enumeration_matches() {
        for r in check_all(3) {
            assert_eq!(r.divergences, 0, "{}: {:?}", r.template, r.examples);
        }
    }
}
