//! A deterministic, manually mined chain that validates every input script
//! at admission, plus the watcher that punishes revoked commitments.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::protocol::{RevokedCommitment, Role};
use crate::script::{eval_spend, EcdsaChecker, EvalError, Script, SpendContext};
use crate::tx::{build_justice_tx, sighash, OutPoint, Tx, TxError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Utxo {
    pub value: u64,
    pub script: Script,
    pub created_height: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Block {
    pub height: u32,
    pub txids: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejected {
    #[error("input {outpoint} does not exist or is unconfirmed")]
    MissingInput { outpoint: OutPoint },
    #[error("input {input} failed script validation: {error}")]
    ScriptFailed { input: usize, error: String },
    #[error("input {outpoint} is already spent")]
    Doublespend { outpoint: OutPoint },
    #[error("timelock not met: {detail}")]
    TimelockNotMet { detail: String },
    #[error("outputs ({outputs} sat) exceed inputs ({inputs} sat)")]
    ValueExceedsInputs { inputs: u64, outputs: u64 },
    #[error("transaction has no inputs or no outputs")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("must mine at least one block")]
    ZeroBlocks,
}

/// One input validation, kept for post-mortem dumps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub height: u32,
    pub txid: Digest,
    pub input: usize,
    pub outpoint: OutPoint,
    pub result: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub height: u32,
    pub confirmed_txs: usize,
    pub utxos: usize,
    pub minted_sat: u64,
    pub fees_sat: u64,
    pub utxo_value_sat: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("outpoint {0} spent twice")]
    DoubleSpend(OutPoint),
    #[error("confirmed input {0} was never created")]
    UnknownInput(OutPoint),
    #[error("utxo set differs from a replay of confirmed transactions")]
    UtxoMismatch,
    #[error("value not conserved: minted {minted}, fees {fees}, unspent {unspent}")]
    Conservation { minted: u64, fees: u64, unspent: u64 },
}

#[derive(Clone, Debug, Serialize)]
struct Confirmed {
    tx: Tx,
    height: u32,
}

/// Height 0 is the genesis block holding coins created with [`SimChain::mint`].
#[derive(Clone, Debug, Serialize)]
pub struct SimChain {
    blocks: Vec<Block>,
    utxos: BTreeMap<OutPoint, Utxo>,
    #[serde(skip)]
    mempool: Vec<Tx>,
    /// Outpoints spent by mempool transactions.
    #[serde(skip)]
    pending_spends: BTreeSet<OutPoint>,
    #[serde(skip)]
    confirmed: BTreeMap<Digest, Confirmed>,
    spent_by: BTreeMap<OutPoint, Digest>,
    minted: Vec<(OutPoint, u64, Script)>,
    trace: Vec<TraceEntry>,
}

impl Default for SimChain {
    fn default() -> Self {
        SimChain::new()
    }
}

impl SimChain {
    pub fn new() -> SimChain {
        SimChain {
            blocks: vec![Block {
                height: 0,
                txids: Vec::new(),
            }],
            utxos: BTreeMap::new(),
            mempool: Vec::new(),
            pending_spends: BTreeSet::new(),
            confirmed: BTreeMap::new(),
            spent_by: BTreeMap::new(),
            minted: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn tip_height(&self) -> u32 {
        self.blocks.last().expect("genesis always exists").height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Creates a coin out of thin air at the genesis height.
    pub fn mint(&mut self, value: u64, script: Script) -> OutPoint {
        let tag = format!("mint/{}", self.minted.len());
        let outpoint = OutPoint::new(Digest::sha256(tag.as_bytes()), 0);
        self.utxos.insert(
            outpoint,
            Utxo {
                value,
                script: script.clone(),
                created_height: 0,
            },
        );
        self.minted.push((outpoint, value, script));
        outpoint
    }

    pub fn utxo(&self, outpoint: &OutPoint) -> Option<&Utxo> {
        self.utxos.get(outpoint)
    }

    pub fn utxos(&self) -> impl Iterator<Item = (&OutPoint, &Utxo)> {
        self.utxos.iter()
    }

    pub fn mempool(&self) -> &[Tx] {
        &self.mempool
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn transaction(&self, txid: &Digest) -> Option<&Tx> {
        self.confirmed.get(txid).map(|c| &c.tx)
    }

    /// Confirmed transaction that spent `outpoint`, if any.
    pub fn spender(&self, outpoint: &OutPoint) -> Option<&Tx> {
        self.spent_by.get(outpoint).and_then(|t| self.transaction(t))
    }

    pub fn in_mempool(&self, txid: &Digest) -> bool {
        self.mempool.iter().any(|t| t.txid() == *txid)
    }

    /// `tip - inclusion height + 1`, or 0 for unknown and unmined transactions.
    pub fn confirmations(&self, txid: &Digest) -> u32 {
        self.confirmed
            .get(txid)
            .map_or(0, |c| self.tip_height() - c.height + 1)
    }

    /// Validates `tx` against the confirmed UTXO set and adds it to the
    /// mempool.
    pub fn broadcast(&mut self, tx: Tx) -> Result<Digest, Rejected> {
        let txid = tx.txid();
        let height = self.tip_height();
        let result = self.validate(&tx, txid, height);
        if result.is_ok() {
            for i in &tx.inputs {
                self.pending_spends.insert(i.outpoint);
            }
            self.mempool.push(tx);
        }
        result.map(|_| txid)
    }

    fn validate(&mut self, tx: &Tx, txid: Digest, height: u32) -> Result<(), Rejected> {
        if tx.inputs.is_empty() || tx.outputs.is_empty() {
            return Err(Rejected::Malformed);
        }
        let mut seen = BTreeSet::new();
        let mut inputs = 0u64;
        for i in &tx.inputs {
            let op = i.outpoint;
            if !seen.insert(op) || self.spent_by.contains_key(&op) || self.pending_spends.contains(&op)
            {
                return Err(Rejected::Doublespend { outpoint: op });
            }
            let u = self
                .utxos
                .get(&op)
                .ok_or(Rejected::MissingInput { outpoint: op })?;
            inputs += u.value;
        }
        let outputs = tx.total_output();
        if outputs > inputs {
            return Err(Rejected::ValueExceedsInputs { inputs, outputs });
        }
        if tx.locktime > height {
            return Err(Rejected::TimelockNotMet {
                detail: format!("locktime {} above tip {height}", tx.locktime),
            });
        }
        for (idx, i) in tx.inputs.iter().enumerate() {
            let u = self.utxos[&i.outpoint].clone();
            let ctx = SpendContext {
                sighash: sighash(tx, idx, &u.script, u.value).map_err(|e: TxError| {
                    Rejected::ScriptFailed {
                        input: idx,
                        error: e.to_string(),
                    }
                })?,
                current_height: height,
                input_age: height - u.created_height + 1,
            };
            let witness = tx.witnesses.get(idx).map(|w| w.items()).unwrap_or(&[]);
            let r = eval_spend(&u.script, witness, &ctx, &EcdsaChecker);
            self.trace.push(TraceEntry {
                height,
                txid,
                input: idx,
                outpoint: i.outpoint,
                result: match &r {
                    Ok(()) => "ok".into(),
                    Err(e) => e.to_string(),
                },
            });
            match r {
                Ok(()) => {}
                Err(e @ (EvalError::Csv { .. } | EvalError::Cltv { .. })) => {
                    return Err(Rejected::TimelockNotMet {
                        detail: format!("input {idx}: {e}"),
                    })
                }
                Err(e) => {
                    return Err(Rejected::ScriptFailed {
                        input: idx,
                        error: e.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Mines `n` blocks; the first takes the whole mempool in arrival order.
    pub fn mine_blocks(&mut self, n: u32) -> Result<Vec<Digest>, ChainError> {
        if n == 0 {
            return Err(ChainError::ZeroBlocks);
        }
        let mut included = Vec::new();
        for _ in 0..n {
            let height = self.tip_height() + 1;
            let txs = std::mem::take(&mut self.mempool);
            self.pending_spends.clear();
            let mut txids = Vec::with_capacity(txs.len());
            for tx in txs {
                let txid = tx.txid();
                for i in &tx.inputs {
                    self.utxos.remove(&i.outpoint);
                    self.spent_by.insert(i.outpoint, txid);
                }
                for (v, o) in tx.outputs.iter().enumerate() {
                    self.utxos.insert(
                        OutPoint::new(txid, v as u32),
                        Utxo {
                            value: o.value,
                            script: o.script.clone(),
                            created_height: height,
                        },
                    );
                }
                self.confirmed.insert(txid, Confirmed { tx, height });
                txids.push(txid);
            }
            included.extend(&txids);
            self.blocks.push(Block { height, txids });
        }
        Ok(included)
    }

    /// Replays every confirmed transaction from the minted coins and checks
    /// that no outpoint is spent twice and that value is conserved.
    pub fn audit(&self) -> Result<AuditReport, AuditError> {
        let mut live: BTreeMap<OutPoint, u64> = BTreeMap::new();
        let mut minted = 0u64;
        for (op, v, _) in &self.minted {
            live.insert(*op, *v);
            minted += v;
        }
        let mut spent = BTreeSet::new();
        let mut fees = 0u64;
        let mut count = 0;
        for b in &self.blocks {
            for txid in &b.txids {
                let tx = &self.confirmed[txid].tx;
                let mut inputs = 0;
                for i in &tx.inputs {
                    if !spent.insert(i.outpoint) {
                        return Err(AuditError::DoubleSpend(i.outpoint));
                    }
                    inputs += live
                        .remove(&i.outpoint)
                        .ok_or(AuditError::UnknownInput(i.outpoint))?;
                }
                fees += inputs - tx.total_output();
                for (v, o) in tx.outputs.iter().enumerate() {
                    live.insert(OutPoint::new(*txid, v as u32), o.value);
                }
                count += 1;
            }
        }
        let replay: BTreeMap<OutPoint, u64> =
            self.utxos.iter().map(|(k, u)| (*k, u.value)).collect();
        if replay != live {
            return Err(AuditError::UtxoMismatch);
        }
        let unspent: u64 = live.values().sum();
        if minted != fees + unspent {
            return Err(AuditError::Conservation {
                minted,
                fees,
                unspent,
            });
        }
        Ok(AuditReport {
            height: self.tip_height(),
            confirmed_txs: count,
            utxos: live.len(),
            minted_sat: minted,
            fees_sat: fees,
            utxo_value_sat: unspent,
        })
    }

    /// Sum of unspent outputs locked by exactly `script`.
    pub fn value_locked_by(&self, script: &Script) -> u64 {
        self.utxos
            .values()
            .filter(|u| u.script == *script)
            .map(|u| u.value)
            .sum()
    }

    /// JSON dump of blocks, UTXOs and the validation trace.
    pub fn dump(&self) -> serde_json::Value {
        let blocks: Vec<_> = self
            .blocks
            .iter()
            .map(|b| {
                serde_json::json!({
                    "height": b.height,
                    "txs": b.txids.iter().map(|t| serde_json::json!({
                        "txid": t,
                        "hex": self.confirmed[t].tx.to_hex(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let utxos: Vec<_> = self
            .utxos
            .iter()
            .map(|(op, u)| {
                serde_json::json!({
                    "outpoint": op.to_string(),
                    "value": u.value,
                    "script": u.script,
                    "created_height": u.created_height,
                })
            })
            .collect();
        serde_json::json!({
            "tip_height": self.tip_height(),
            "blocks": blocks,
            "utxos": utxos,
            "trace": self.trace,
        })
    }
}

/// What one party watches for: revoked counterparty commitments spending
/// `funding`, each with the key that punishes it.
#[derive(Clone, Debug)]
pub struct WatchEntry {
    pub funding: OutPoint,
    pub owner: Role,
    pub sweep_to: PublicKey,
    pub revoked: BTreeMap<Digest, RevokedCommitment>,
}

impl WatchEntry {
    pub fn new(funding: OutPoint, owner: Role, sweep_to: PublicKey) -> WatchEntry {
        WatchEntry {
            funding,
            owner,
            sweep_to,
            revoked: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, r: RevokedCommitment) {
        self.revoked.insert(r.commitment.txid(), r);
    }
}

/// Justice transactions for every revoked commitment that spent a watched
/// funding output and whose revocable outputs are still unspent.
pub fn watch_and_punish(chain: &SimChain, entries: &[WatchEntry]) -> Vec<Tx> {
    let mut out = Vec::new();
    for e in entries {
        let Some(spender) = chain.spender(&e.funding) else {
            continue;
        };
        let Some(r) = e.revoked.get(&spender.txid()) else {
            continue;
        };
        let Ok(Some(justice)) = build_justice_tx(&r.commitment, &r.revocation_key, &e.sweep_to)
        else {
            continue;
        };
        let live = justice
            .inputs
            .iter()
            .all(|i| chain.utxo(&i.outpoint).is_some() && !chain.pending_spends.contains(&i.outpoint));
        if live {
            out.push(justice);
        }
    }
    out
}
