use serde::{Deserialize, Serialize};

use crate::crypto::{revocation_pubkey, Digest, PublicKey};
use crate::script::{
    commitment_output_script, p2pk_script, revocable_delayed_script, HtlcTxKind, OutputKind,
    Script, ScriptParams, Side, Witness,
};

use super::{sighash, ChannelParams, ChannelSnapshot, Htlc, OutPoint, Tx, TxError, TxIn, TxOut};
use super::SEQUENCE_FINAL;

pub const TX_VERSION: u32 = 2;
/// The channel output is always the first output of the funding transaction.
pub const FUNDING_VOUT: u32 = 0;

/// A wallet output the IoT device spends to fund the channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingInput {
    pub outpoint: OutPoint,
    pub value_sat: u64,
}

pub fn build_funding_tx(
    utxo: &FundingInput,
    params: &ChannelParams,
    change_pk: &PublicKey,
) -> Result<Tx, TxError> {
    params.validate()?;
    let needed = params.capacity_sat + params.onchain_fee_sat;
    if utxo.value_sat < needed {
        return Err(TxError::InsufficientFunds {
            needed,
            available: utxo.value_sat,
        });
    }
    let mut outputs = vec![TxOut {
        value: params.capacity_sat,
        script: params.funding_script()?,
    }];
    let change = utxo.value_sat - needed;
    if change > 0 {
        outputs.push(TxOut {
            value: change,
            script: p2pk_script(change_pk),
        });
    }
    Ok(Tx {
        version: TX_VERSION,
        inputs: vec![TxIn {
            outpoint: utxo.outpoint,
            sequence: SEQUENCE_FINAL,
        }],
        outputs,
        witnesses: vec![Witness::default()],
        locktime: 0,
    })
}

/// Digest every party signs to spend the funding output with `tx`.
pub fn funding_sighash(tx: &Tx, params: &ChannelParams) -> Result<Digest, TxError> {
    sighash(tx, 0, &params.funding_script()?, params.capacity_sat)
}

/// Role of one commitment output, parallel to `tx.outputs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentOutput {
    pub kind: OutputKind,
    pub htlc: Option<Htlc>,
}

/// A commitment transaction together with the metadata needed to spend or
/// punish its outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentTx {
    pub side: Side,
    pub state_index: u64,
    pub revocation_pubkey: PublicKey,
    pub tx: Tx,
    pub outputs: Vec<CommitmentOutput>,
}

impl CommitmentTx {
    pub fn txid(&self) -> Digest {
        self.tx.txid()
    }

    pub fn find(&self, kind: OutputKind) -> Option<u32> {
        self.outputs.iter().position(|o| o.kind == kind).map(|i| i as u32)
    }

    /// Total value of all outputs of `kind`.
    pub fn value_of(&self, kind: OutputKind) -> u64 {
        self.outputs
            .iter()
            .zip(&self.tx.outputs)
            .filter(|(o, _)| o.kind == kind)
            .map(|(_, out)| out.value)
            .sum()
    }

    pub fn htlc_vouts(&self) -> impl Iterator<Item = u32> + '_ {
        self.outputs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.htlc.is_some())
            .map(|(i, _)| i as u32)
    }
}

/// Revocation pubkey guarding `side`'s commitment for this snapshot. The
/// counterparty contributes the basepoint, the owner the per-commitment point.
pub fn commitment_revocation_pubkey(
    side: Side,
    snapshot: &ChannelSnapshot,
    params: &ChannelParams,
) -> Result<PublicKey, TxError> {
    let (basepoint, point) = match side {
        Side::Gateway => (&params.bridge.revocation_basepoint, &snapshot.gateway_point),
        Side::Bridge => (&params.gateway.revocation_basepoint, &snapshot.bridge_point),
    };
    revocation_pubkey(basepoint, point)
        .map_err(|e| TxError::InvalidParams(format!("revocation key: {e}")))
}

/// Commitment input sequence; the upper bit disables relative locktime and
/// the rest carries the state number.
pub fn commitment_sequence(state_index: u64) -> u32 {
    0x8000_0000 | (state_index & 0x7fff_ffff) as u32
}

/// Builds `side`'s commitment transaction. Outputs appear as to_IoT,
/// to_local, to_remote, then HTLCs in id order; zero-value outputs are
/// dropped. Commitments carry no on-chain fee.
pub fn build_commitment_tx(
    side: Side,
    snapshot: &ChannelSnapshot,
    params: &ChannelParams,
    funding: OutPoint,
) -> Result<CommitmentTx, TxError> {
    snapshot.check_conservation(params.capacity_sat)?;
    let revocation = commitment_revocation_pubkey(side, snapshot, params)?;
    let (local, remote, local_balance, remote_balance, htlc_kind) = match side {
        Side::Gateway => (
            &params.gateway,
            &params.bridge,
            snapshot.balance_gateway_fees_sat,
            snapshot.balance_bridge_sat,
            OutputKind::OfferedHtlc,
        ),
        Side::Bridge => (
            &params.bridge,
            &params.gateway,
            snapshot.balance_bridge_sat,
            snapshot.balance_gateway_fees_sat,
            OutputKind::ReceivedHtlc,
        ),
    };
    let base = ScriptParams {
        iot_pubkey: Some(params.iot.payment),
        revocation_pubkey: Some(revocation),
        delayed_pubkey: Some(local.delayed),
        remote_pubkey: Some(remote.payment),
        local_htlc_pubkey: Some(local.htlc),
        remote_htlc_pubkey: Some(remote.htlc),
        iot_htlc_pubkey: Some(params.iot.htlc),
        csv_delay: Some(params.csv_delay),
        ..ScriptParams::default()
    };

    let mut outputs = Vec::new();
    let mut meta = Vec::new();
    let mut push = |kind, value: u64, script: Script, htlc: Option<Htlc>| {
        if value > 0 {
            outputs.push(TxOut { value, script });
            meta.push(CommitmentOutput { kind, htlc });
        }
    };
    for (kind, value) in [
        (OutputKind::ToIot, snapshot.balance_iot_sat),
        (OutputKind::ToLocal, local_balance),
        (OutputKind::ToRemote, remote_balance),
    ] {
        push(kind, value, commitment_output_script(side, kind, &base)?, None);
    }
    let mut htlcs = snapshot.htlcs.clone();
    htlcs.sort_by_key(|h| h.id);
    for h in htlcs {
        let p = ScriptParams {
            payment_hash: Some(h.payment_hash.0),
            cltv_expiry: Some(h.expiry_height),
            ..base.clone()
        };
        let script = commitment_output_script(side, htlc_kind, &p)?;
        push(htlc_kind, h.amount_sat, script, Some(h));
    }

    Ok(CommitmentTx {
        side,
        state_index: snapshot.state_index,
        revocation_pubkey: revocation,
        tx: Tx {
            version: TX_VERSION,
            inputs: vec![TxIn {
                outpoint: funding,
                sequence: commitment_sequence(snapshot.state_index),
            }],
            outputs,
            witnesses: vec![Witness::default()],
            locktime: 0,
        },
        outputs: meta,
    })
}

/// Both commitment transactions for one state, gateway first.
pub fn build_commitment_txs(
    snapshot: &ChannelSnapshot,
    params: &ChannelParams,
    funding: OutPoint,
) -> Result<(CommitmentTx, CommitmentTx), TxError> {
    Ok((
        build_commitment_tx(Side::Gateway, snapshot, params, funding)?,
        build_commitment_tx(Side::Bridge, snapshot, params, funding)?,
    ))
}

/// Second-stage transaction spending HTLC output `vout` of `parent`.
/// Timeout is only defined on the gateway's commitment and success only on
/// the bridge's. The on-chain fee comes out of the HTLC amount.
pub fn build_htlc_tx(
    kind: HtlcTxKind,
    parent: &CommitmentTx,
    vout: u32,
    params: &ChannelParams,
) -> Result<Tx, TxError> {
    match (kind, parent.side) {
        (HtlcTxKind::Timeout, Side::Bridge) => {
            return Err(TxError::UnsupportedSide("HTLC-timeout", "bridge"))
        }
        (HtlcTxKind::Success, Side::Gateway) => {
            return Err(TxError::UnsupportedSide("HTLC-success", "gateway"))
        }
        _ => {}
    }
    let htlc = parent
        .outputs
        .get(vout as usize)
        .and_then(|o| o.htlc.as_ref())
        .ok_or(TxError::NotAnHtlcOutput(vout))?;
    let fee = params.onchain_fee_sat;
    if htlc.amount_sat <= fee {
        return Err(TxError::HtlcBelowFee {
            amount: htlc.amount_sat,
            fee,
        });
    }
    let (delayed, locktime) = match kind {
        HtlcTxKind::Timeout => (params.iot.delayed, htlc.expiry_height),
        HtlcTxKind::Success => (params.bridge.delayed, 0),
    };
    Ok(Tx {
        version: TX_VERSION,
        inputs: vec![TxIn {
            outpoint: parent.tx.outpoint(vout),
            sequence: 0,
        }],
        outputs: vec![TxOut {
            value: htlc.amount_sat - fee,
            script: revocable_delayed_script(&parent.revocation_pubkey, params.csv_delay, &delayed),
        }],
        witnesses: vec![Witness::default()],
        locktime,
    })
}

/// Who covers the closing transaction's on-chain fee.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeePayer {
    Iot,
    Gateway,
}

/// Mutual-close transaction with plain outputs in the order IoT, gateway,
/// bridge; zero-value outputs are dropped.
pub fn build_closing_tx(
    snapshot: &ChannelSnapshot,
    params: &ChannelParams,
    funding: OutPoint,
    fee_sat: u64,
    payer: FeePayer,
) -> Result<Tx, TxError> {
    if !snapshot.htlcs.is_empty() {
        return Err(TxError::PendingHtlcs);
    }
    snapshot.check_conservation(params.capacity_sat)?;
    let mut iot = snapshot.balance_iot_sat;
    let mut gateway = snapshot.balance_gateway_fees_sat;
    let payer_balance = match payer {
        FeePayer::Iot => &mut iot,
        FeePayer::Gateway => &mut gateway,
    };
    if *payer_balance < fee_sat || (payer == FeePayer::Gateway && *payer_balance == 0) {
        return Err(TxError::InsufficientBalanceForFee {
            balance: *payer_balance,
            fee: fee_sat,
        });
    }
    *payer_balance -= fee_sat;
    let outputs = [
        (iot, &params.iot.payment),
        (gateway, &params.gateway.payment),
        (snapshot.balance_bridge_sat, &params.bridge.payment),
    ]
    .into_iter()
    .filter(|(v, _)| *v > 0)
    .map(|(value, pk)| TxOut {
        value,
        script: p2pk_script(pk),
    })
    .collect();
    Ok(Tx {
        version: TX_VERSION,
        inputs: vec![TxIn {
            outpoint: funding,
            sequence: SEQUENCE_FINAL,
        }],
        outputs,
        witnesses: vec![Witness::default()],
        locktime: 0,
    })
}

/// Sweeps every revocable output of a revoked commitment (the owner's
/// delayed output and all HTLCs) to `sweep_to` with zero fee. Outputs with
/// no revocation branch, such as to_IoT, are left alone. Returns `None` when
/// there is nothing to sweep.
pub fn build_justice_tx(
    revoked: &CommitmentTx,
    revocation_key: &crate::crypto::SecretKey,
    sweep_to: &PublicKey,
) -> Result<Option<Tx>, TxError> {
    let swept: Vec<(u32, OutputKind)> = revoked
        .outputs
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            matches!(
                o.kind,
                OutputKind::ToLocal | OutputKind::OfferedHtlc | OutputKind::ReceivedHtlc
            )
        })
        .map(|(v, o)| (v as u32, o.kind))
        .collect();
    if swept.is_empty() {
        return Ok(None);
    }
    if revocation_key.public_key() != revoked.revocation_pubkey {
        return Err(TxError::InvalidParams(
            "revocation key does not match the commitment".into(),
        ));
    }
    let total = swept
        .iter()
        .map(|(v, _)| revoked.tx.outputs[*v as usize].value)
        .sum();
    let mut tx = Tx {
        version: TX_VERSION,
        inputs: swept
            .iter()
            .map(|(v, _)| TxIn {
                outpoint: revoked.tx.outpoint(*v),
                sequence: SEQUENCE_FINAL,
            })
            .collect(),
        outputs: vec![TxOut {
            value: total,
            script: p2pk_script(sweep_to),
        }],
        witnesses: vec![Witness::default(); swept.len()],
        locktime: 0,
    };
    for (i, (v, kind)) in swept.iter().enumerate() {
        let spent = &revoked.tx.outputs[*v as usize];
        let sig = revocation_key.sign(&sighash(&tx, i, &spent.script, spent.value)?);
        tx.witnesses[i] = match kind {
            OutputKind::ToLocal => crate::script::revocation_witness(&sig),
            _ => crate::script::htlc_revocation_witness(&sig, &revoked.revocation_pubkey),
        };
    }
    Ok(Some(tx))
}
