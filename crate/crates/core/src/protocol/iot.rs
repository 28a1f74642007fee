use crate::crypto::{Digest, Signature};
use crate::script::p2pk_script;
use crate::tx::{
    build_funding_tx, funding_sighash, sighash, ChannelParams, FeePayer, FundingInput,
    IotSecrets, OutPoint, Tx, FUNDING_VOUT,
};

use super::{
    invalid, unexpected, Command, Effect, Event, Input, IotMessage, Message, Phase,
    ProtocolError, Role, StepError, StepResult,
};

#[derive(Clone, Debug)]
pub struct IotConfig {
    /// Largest closing fee the device accepts to pay out of its balance.
    pub max_closing_fee_sat: u64,
}

impl Default for IotConfig {
    fn default() -> Self {
        IotConfig {
            max_closing_fee_sat: 100_000,
        }
    }
}

/// The IoT device. It keeps no commitment history: before signing anything
/// it checks the transaction against the balance it expects to own.
#[derive(Clone, Debug)]
pub struct IotState {
    secrets: IotSecrets,
    wallet: FundingInput,
    cfg: IotConfig,
    phase: Phase,
    requested_capacity: u64,
    params: Option<ChannelParams>,
    funding_outpoint: Option<OutPoint>,
    balance_sat: u64,
    pending_payment: Option<u64>,
    payments_completed: u64,
    closing_payer: Option<FeePayer>,
    signed: Vec<Digest>,
}

impl IotState {
    /// `wallet` is an output paying the device's payment key.
    pub fn new(secrets: IotSecrets, wallet: FundingInput, cfg: IotConfig) -> IotState {
        IotState {
            secrets,
            wallet,
            cfg,
            phase: Phase::Idle,
            requested_capacity: 0,
            params: None,
            funding_outpoint: None,
            balance_sat: 0,
            pending_payment: None,
            payments_completed: 0,
            closing_payer: None,
            signed: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn secrets(&self) -> &IotSecrets {
        &self.secrets
    }

    /// Channel balance the device believes it owns, after completed payments.
    pub fn balance_sat(&self) -> u64 {
        self.balance_sat
    }

    pub fn payments_completed(&self) -> u64 {
        self.payments_completed
    }

    pub fn pending_payment(&self) -> Option<u64> {
        self.pending_payment
    }

    /// Every digest the device has signed, oldest first.
    pub fn signed_digests(&self) -> &[Digest] {
        &self.signed
    }

    pub fn step(&self, input: &Input) -> StepResult<IotState> {
        let mut next = self.clone();
        match next.apply(input) {
            Ok(effects) => Ok((next, effects)),
            Err(error) => Err(StepError {
                role: Role::Iot,
                phase: self.phase,
                error,
            }),
        }
    }

    fn sign(&mut self, key: &crate::crypto::KeyPair, d: Digest, fx: &mut Vec<Effect>) -> Signature {
        self.signed.push(d);
        fx.push(Effect::Event(Event::Signed { digest: d }));
        key.sign(&d)
    }

    fn apply(&mut self, input: &Input) -> Result<Vec<Effect>, ProtocolError> {
        let mut fx = Vec::new();
        let to_gw = |m: IotMessage| Effect::send(Role::Gateway, m);
        match (self.phase, input) {
            (Phase::Idle, Input::Command(Command::Open { capacity_sat })) => {
                if *capacity_sat == 0 || *capacity_sat >= self.wallet.value_sat {
                    return Err(invalid(format!(
                        "capacity {capacity_sat} sat must be positive and below the wallet value {}",
                        self.wallet.value_sat
                    )));
                }
                self.requested_capacity = *capacity_sat;
                self.phase = Phase::Opening;
                fx.push(to_gw(IotMessage::OpenChannelRequest {
                    capacity_sat: *capacity_sat,
                    keys: self.secrets.public(),
                    wallet: self.wallet.clone(),
                }));
            }

            (
                Phase::Opening,
                Input::Message {
                    from: Role::Gateway,
                    msg:
                        Message::Iot(IotMessage::FundingSignatureRequest {
                            params,
                            wallet,
                            commitment_tx,
                        }),
                },
            ) => {
                if params.iot != self.secrets.public() || *wallet != self.wallet {
                    return Err(invalid("funding request does not use the device's keys or wallet"));
                }
                if params.capacity_sat != self.requested_capacity {
                    return Err(invalid(format!(
                        "funding request capacity {} differs from requested {}",
                        params.capacity_sat, self.requested_capacity
                    )));
                }
                let funding = build_funding_tx(&self.wallet, params, &self.secrets.payment.public)?;
                let outpoint = funding.outpoint(FUNDING_VOUT);
                self.params = Some(params.clone());
                self.funding_outpoint = Some(outpoint);
                self.check_commitment(commitment_tx, params.capacity_sat)?;

                let d = funding_sighash(commitment_tx, params)?;
                let signature = self.sign(&self.secrets.funding.clone(), d, &mut fx);
                let wallet_script = p2pk_script(&self.secrets.payment.public);
                let fd = sighash(&funding, 0, &wallet_script, self.wallet.value_sat)?;
                let funding_signature = self.sign(&self.secrets.payment.clone(), fd, &mut fx);
                self.balance_sat = params.capacity_sat;
                self.phase = Phase::Operational;
                fx.push(to_gw(IotMessage::FundingSigned {
                    signature,
                    funding_signature,
                }));
            }

            (
                Phase::Operational,
                Input::Command(Command::Pay {
                    amount_sat,
                    destination,
                }),
            ) => {
                if self.pending_payment.is_some() {
                    return Err(invalid("a payment is already in flight"));
                }
                if *amount_sat == 0 || *amount_sat > self.balance_sat {
                    return Err(invalid(format!(
                        "payment of {amount_sat} sat exceeds balance {} sat or is zero",
                        self.balance_sat
                    )));
                }
                self.pending_payment = Some(*amount_sat);
                fx.push(to_gw(IotMessage::SendPayment {
                    amount_sat: *amount_sat,
                    destination: *destination,
                }));
            }

            (
                Phase::Operational | Phase::Closing,
                Input::Message {
                    from: Role::Gateway,
                    msg:
                        Message::Iot(IotMessage::SignTxRequest {
                            commitment_tx,
                            htlc_txs,
                        }),
                },
            ) => {
                let params = self.params.clone().expect("set when funding was signed");
                let expected = self.balance_sat - self.pending_payment.unwrap_or(0);
                self.check_commitment(commitment_tx, expected)?;
                let d = funding_sighash(commitment_tx, &params)?;
                let txid = commitment_tx.txid();
                let mut digests = Vec::new();
                for h in htlc_txs {
                    let [input] = h.inputs.as_slice() else {
                        return Err(invalid("HTLC transaction must have one input"));
                    };
                    let spent = commitment_tx
                        .outputs
                        .get(input.outpoint.vout as usize)
                        .filter(|_| input.outpoint.txid == txid)
                        .ok_or_else(|| invalid("HTLC transaction does not spend the commitment"))?;
                    digests.push(sighash(h, 0, &spent.script, spent.value)?);
                }
                let signature = self.sign(&self.secrets.funding.clone(), d, &mut fx);
                let htlc_key = self.secrets.htlc.clone();
                let htlc_signatures = digests
                    .into_iter()
                    .map(|hd| self.sign(&htlc_key, hd, &mut fx))
                    .collect();
                fx.push(to_gw(IotMessage::TxSigned {
                    signature,
                    htlc_signatures,
                }));
            }

            (
                Phase::Operational,
                Input::Message {
                    from: Role::Gateway,
                    msg: Message::Iot(IotMessage::PaymentSuccess),
                },
            ) => {
                let amount = self.pending_payment.take().ok_or_else(|| unexpected(input))?;
                self.balance_sat -= amount;
                self.payments_completed += 1;
                fx.push(Effect::Event(Event::PaymentCompleted { amount_sat: amount }));
            }

            (Phase::Operational, Input::Command(Command::Close)) => {
                if self.pending_payment.is_some() {
                    return Err(invalid("cannot close with a payment in flight"));
                }
                self.closing_payer = Some(FeePayer::Iot);
                self.phase = Phase::Closing;
                fx.push(to_gw(IotMessage::ChannelClosingRequest));
            }

            (
                Phase::Operational,
                Input::Message {
                    from: Role::Gateway,
                    msg: Message::Iot(IotMessage::ChannelClosingRequest),
                },
            ) => {
                self.closing_payer = Some(FeePayer::Gateway);
                self.phase = Phase::Closing;
            }

            (
                Phase::Closing,
                Input::Message {
                    from: Role::Gateway,
                    msg: Message::Iot(IotMessage::ClosingTxRequest { closing_tx }),
                },
            ) => {
                let params = self.params.clone().expect("set when funding was signed");
                let allowance = match self.closing_payer {
                    Some(FeePayer::Iot) => self.cfg.max_closing_fee_sat,
                    _ => 0,
                };
                let expected = self.balance_sat.saturating_sub(allowance);
                self.check_spends_funding(closing_tx)?;
                let found = self.iot_value(closing_tx);
                if found < expected {
                    return Err(ProtocolError::BalanceCheckFailed { expected, found });
                }
                let d = funding_sighash(closing_tx, &params)?;
                let signature = self.sign(&self.secrets.funding.clone(), d, &mut fx);
                fx.push(to_gw(IotMessage::ClosingTxSigned { signature }));
            }

            (
                Phase::Operational | Phase::Closing,
                Input::Message {
                    from: Role::Gateway,
                    msg: Message::Iot(IotMessage::ChannelClosed),
                },
            ) => {
                self.pending_payment = None;
                self.phase = Phase::Closed;
                fx.push(Effect::Event(Event::ChannelClosed));
            }

            _ => return Err(unexpected(input)),
        }
        Ok(fx)
    }

    fn iot_value(&self, tx: &Tx) -> u64 {
        let script = p2pk_script(&self.secrets.payment.public);
        tx.outputs
            .iter()
            .filter(|o| o.script == script)
            .map(|o| o.value)
            .sum()
    }

    fn check_spends_funding(&self, tx: &Tx) -> Result<(), ProtocolError> {
        let funding = self.funding_outpoint.expect("set when funding was signed");
        match tx.inputs.as_slice() {
            [i] if i.outpoint == funding => Ok(()),
            _ => Err(invalid("transaction does not spend the channel funding output")),
        }
    }

    /// A commitment must spend the funding output, keep the capacity intact
    /// and pay at least `expected` to the device's key.
    fn check_commitment(&self, tx: &Tx, expected: u64) -> Result<(), ProtocolError> {
        self.check_spends_funding(tx)?;
        let capacity = self.params.as_ref().expect("set").capacity_sat;
        if tx.total_output() != capacity {
            return Err(invalid(format!(
                "commitment outputs total {} sat, capacity is {capacity} sat",
                tx.total_output()
            )));
        }
        let found = self.iot_value(tx);
        if found < expected {
            return Err(ProtocolError::BalanceCheckFailed { expected, found });
        }
        Ok(())
    }
}
