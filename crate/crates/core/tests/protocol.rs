mod common;

use std::collections::BTreeSet;

use iotln::crypto::Digest;
use iotln::harness::{build_world, open_channel, pay, toll_gate_node, ScenarioConfig, World};
use iotln::protocol::{
    msg_type, negotiate_close, open_message, seal_message, BridgeState, Command, DecodeError,
    Effect, Event, GatewayState, Input, IotMessage, IotState, Message, Phase, PeerMessage,
    ProtocolError, RevocationChain, Role,
};
use iotln::script::Side;
use iotln::tx::{build_commitment_tx, COIN};
use proptest::prelude::*;

fn opened(cfg: &ScenarioConfig) -> World {
    let mut w = build_world(cfg, 7).unwrap();
    open_channel(&mut w, cfg.capacity_sat).unwrap();
    w
}

fn reference() -> World {
    opened(&ScenarioConfig::reference())
}

fn sends(fx: &[Effect]) -> Vec<(Role, Message)> {
    fx.iter()
        .filter_map(|e| match e {
            Effect::Send { to, msg } => Some((*to, msg.clone())),
            _ => None,
        })
        .collect()
}

fn only(fx: &[Effect], to: Role) -> Message {
    let mut m: Vec<_> = sends(fx).into_iter().filter(|(r, _)| *r == to).collect();
    assert_eq!(m.len(), 1, "{fx:?}");
    m.remove(0).1
}

/// Steps the payment by hand up to the gateway's commitment_signed for the
/// bridge, returning every intermediate state.
struct Handshake {
    iot: IotState,
    gateway: GatewayState,
    bridge: BridgeState,
    sign_request: Message,
    commitment_signed: PeerMessage,
}

fn handshake(w: &World, amount: u64) -> Handshake {
    let pay = Command::Pay {
        amount_sat: amount,
        destination: toll_gate_node(),
    };
    let (iot, fx) = w.iot.step(&Input::Command(pay)).unwrap();
    let send = only(&fx, Role::Gateway);
    let (gateway, fx) = w.gateway.step(&Input::msg(Role::Iot, send)).unwrap();
    assert_eq!(gateway.phase(), Phase::AwaitIotSig);
    let add = only(&fx, Role::Bridge);
    let sign_request = only(&fx, Role::Iot);
    let (bridge, _) = w.bridge.step(&Input::msg(Role::Gateway, add)).unwrap();
    let (iot, fx) = iot.step(&Input::msg(Role::Gateway, sign_request.clone())).unwrap();
    let signed = only(&fx, Role::Gateway);
    let (gateway, fx) = gateway.step(&Input::msg(Role::Iot, signed)).unwrap();
    let Message::Peer(commitment_signed) = only(&fx, Role::Bridge) else {
        panic!("expected a peer message");
    };
    Handshake {
        iot,
        gateway,
        bridge,
        sign_request,
        commitment_signed,
    }
}

#[test]
fn every_message_kind_round_trips() {
    let mut cfg = ScenarioConfig::reference();
    cfg.close = None;
    let mut w = build_world(&cfg, 1).unwrap();
    w.record_messages = true;
    open_channel(&mut w, cfg.capacity_sat).unwrap();
    pay(&mut w, COIN, toll_gate_node()).unwrap().unwrap();
    w.input(Role::Iot, Input::Command(Command::Close)).unwrap();

    let keys = iotln::crypto::EnvelopeKeys::derive(b"codec");
    let mut seen = BTreeSet::new();
    for (_, _, m) in &w.messages {
        seen.insert(m.msg_type());
        assert_eq!(&Message::decode(&m.encode()).unwrap(), m, "{}", m.name());
        let env = seal_message(m, &keys);
        let env = iotln::crypto::SecureEnvelope::from_bytes(&env.to_bytes()).unwrap();
        assert_eq!(&open_message(&env, &keys).unwrap(), m);
    }
    use msg_type::*;
    let all = BTreeSet::from([
        OPEN_CHANNEL_REQUEST,
        FUNDING_SIGNATURE_REQUEST,
        IOT_FUNDING_SIGNED,
        SEND_PAYMENT,
        SIGN_TX_REQUEST,
        TX_SIGNED,
        PAYMENT_SUCCESS,
        CHANNEL_CLOSING_REQUEST,
        CLOSING_TX_REQUEST,
        CLOSING_TX_SIGNED,
        CHANNEL_CLOSED,
        OPEN_CHANNEL,
        ACCEPT_CHANNEL,
        FUNDING_CREATED,
        FUNDING_SIGNED,
        FUNDING_LOCKED,
        SHUTDOWN,
        CLOSING_SIGNED,
        UPDATE_ADD_HTLC,
        COMMITMENT_SIGNED,
        REVOKE_AND_ACK,
    ]);
    assert_eq!(seen, all);
}

#[test]
fn malformed_bytes_are_rejected() {
    assert_eq!(Message::decode(&[0xee]), Err(DecodeError::UnknownType(0xee)));
    assert_eq!(Message::decode(&[]), Err(DecodeError::Truncated));
    let m: Message = IotMessage::SendPayment {
        amount_sat: 5,
        destination: toll_gate_node(),
    }
    .into();
    let bytes = m.encode();
    assert_eq!(
        Message::decode(&bytes[..bytes.len() - 1]),
        Err(DecodeError::Truncated)
    );
    let mut long = bytes.clone();
    long.push(0);
    assert_eq!(Message::decode(&long), Err(DecodeError::TrailingBytes));
}

#[test]
fn tampered_envelope_is_rejected() {
    let keys = iotln::crypto::EnvelopeKeys::derive(b"codec");
    let m: Message = IotMessage::PaymentSuccess.into();
    let bytes = seal_message(&m, &keys).to_bytes();
    for i in 0..bytes.len() {
        let mut t = bytes.clone();
        t[i] ^= 0x01;
        let opened = iotln::crypto::SecureEnvelope::from_bytes(&t)
            .ok()
            .and_then(|e| open_message(&e, &keys).ok());
        assert!(opened.is_none(), "flip at byte {i} accepted");
    }
    let other = iotln::crypto::EnvelopeKeys::derive(b"other");
    let env = seal_message(&m, &keys);
    assert!(open_message(&env, &other).is_err());
}

#[test]
fn unexpected_input_leaves_state_usable() {
    let mut w = reference();
    let bogus = PeerMessage::RevokeAndAck {
        secret: iotln::protocol::CommitmentSecret([0; 32]),
        next_point: toll_gate_node(),
    };
    let err = w.gateway.step(&Input::msg(Role::Bridge, bogus.clone())).unwrap_err();
    assert_eq!(err.phase, Phase::Operational);
    assert!(w.bridge.step(&Input::msg(Role::Gateway, bogus)).is_err());
    assert!(w
        .iot
        .step(&Input::msg(Role::Gateway, IotMessage::PaymentSuccess))
        .is_err());
    assert!(w.gateway.step(&Input::Timeout).is_err() || w.gateway.phase() == Phase::Operational);
    // The same states carry on as if nothing had arrived.
    assert!(pay(&mut w, COIN, toll_gate_node()).unwrap().is_some());
    assert_eq!(w.gateway.snapshot().unwrap().state_index, 1);
}

#[test]
fn commitment_without_device_signature_is_refused() {
    let w = reference();
    let h = handshake(&w, COIN);
    let PeerMessage::CommitmentSigned {
        sig_iot,
        signature,
        htlc_sigs_iot,
        htlc_signatures,
    } = h.commitment_signed.clone()
    else {
        panic!("expected commitment_signed");
    };
    let with = |sig_iot| PeerMessage::CommitmentSigned {
        sig_iot,
        signature,
        htlc_sigs_iot: htlc_sigs_iot.clone(),
        htlc_signatures: htlc_signatures.clone(),
    };
    let revealed = h.bridge.revocation_chain().revealed();

    let err = h.bridge.step(&Input::msg(Role::Gateway, with(None))).unwrap_err();
    assert_eq!(err.error, ProtocolError::MissingIotSignature);
    let forged = with(Some(signature));
    let err = h.bridge.step(&Input::msg(Role::Gateway, forged)).unwrap_err();
    assert_eq!(err.error, ProtocolError::InvalidSignature("iot"));
    assert_eq!(h.bridge.revocation_chain().revealed(), revealed);

    let (bridge, fx) = h
        .bridge
        .step(&Input::msg(Role::Gateway, with(sig_iot)))
        .unwrap();
    assert_eq!(bridge.revocation_chain().revealed(), revealed + 1);
    assert!(fx.contains(&Effect::Event(Event::Revoked { state_index: 0 })));
    assert_eq!(h.iot.pending_payment(), Some(COIN));
    let revoke = sends(&fx)
        .into_iter()
        .find(|(_, m)| matches!(m, Message::Peer(PeerMessage::RevokeAndAck { .. })))
        .unwrap();
    let (gw, _) = h.gateway.step(&Input::msg(Role::Bridge, revoke.1)).unwrap();
    assert_eq!(gw.revoked_bridge_commitments().len(), 1);
}

#[test]
fn gateway_needs_tx_signed_before_commitment_signed() {
    let w = reference();
    let send = IotMessage::SendPayment {
        amount_sat: COIN,
        destination: toll_gate_node(),
    };
    let (gw, fx) = w.gateway.step(&Input::msg(Role::Iot, send)).unwrap();
    let is_commit = |m: &Message| matches!(m, Message::Peer(PeerMessage::CommitmentSigned { .. }));
    assert!(!sends(&fx).iter().any(|(_, m)| is_commit(m)));
    // Anything other than a valid TxSigned leaves it waiting.
    let bad = IotMessage::TxSigned {
        signature: w.gateway.secrets().funding.sign(&Digest::sha256(b"x")),
        htlc_signatures: Vec::new(),
    };
    assert!(gw.step(&Input::msg(Role::Iot, bad)).is_err());
    assert!(gw.step(&Input::msg(Role::Iot, IotMessage::PaymentSuccess)).is_err());
    assert_eq!(gw.phase(), Phase::AwaitIotSig);
    if let Ok((after, fx)) = gw.step(&Input::Timeout) {
        assert!(!sends(&fx).iter().any(|(_, m)| is_commit(m)));
        assert_ne!(after.phase(), Phase::AwaitRevokeAck);
    }
}

#[test]
fn device_refuses_to_sign_an_underpaying_commitment() {
    let w = reference();
    let h = handshake(&w, COIN);
    let Message::Iot(IotMessage::SignTxRequest { htlc_txs, .. }) = h.sign_request else {
        panic!("expected SignTxRequest");
    };
    let mut s = h.bridge.pending().unwrap().clone();
    s.balance_iot_sat -= 1;
    s.balance_bridge_sat += 1;
    let params = h.bridge.params().unwrap();
    let c = build_commitment_tx(Side::Bridge, &s, params, w.funding_outpoint().unwrap()).unwrap();
    let req = IotMessage::SignTxRequest {
        commitment_tx: c.tx,
        htlc_txs,
    };
    let pay = Command::Pay {
        amount_sat: COIN,
        destination: toll_gate_node(),
    };
    let (iot, _) = w.iot.step(&Input::Command(pay)).unwrap();
    let err = iot.step(&Input::msg(Role::Gateway, req)).unwrap_err();
    assert!(
        matches!(err.error, ProtocolError::BalanceCheckFailed { .. }),
        "{err}"
    );
}

#[test]
fn payment_not_above_fee_underflows() {
    let mut cfg = ScenarioConfig::reference();
    cfg.fee_rate_permille = 1000;
    let w = opened(&cfg);
    let send = IotMessage::SendPayment {
        amount_sat: COIN,
        destination: toll_gate_node(),
    };
    let err = w.gateway.step(&Input::msg(Role::Iot, send)).unwrap_err();
    assert_eq!(
        err.error,
        ProtocolError::FeeUnderflow {
            amount: COIN,
            fee: COIN
        }
    );
}

#[test]
fn gateway_without_fees_cannot_close() {
    let w = reference();
    let err = w.gateway.step(&Input::Command(Command::Close)).unwrap_err();
    assert!(
        matches!(err.error, ProtocolError::InsufficientBalanceForFee { balance: 0, .. }),
        "{err}"
    );
}

#[test]
fn operational_only_at_funding_depth() {
    let cfg = ScenarioConfig::reference();
    let mut w = build_world(&cfg, 2).unwrap();
    w.input(Role::Iot, Input::Command(Command::Open { capacity_sat: cfg.capacity_sat }))
        .unwrap();
    for _ in 1..cfg.funding_depth {
        w.mine(1).unwrap();
        assert_ne!(w.gateway.phase(), Phase::Operational);
        assert_ne!(w.bridge.phase(), Phase::Operational);
    }
    w.mine(1).unwrap();
    let funding = w.funding_outpoint().unwrap();
    assert_eq!(w.chain.confirmations(&funding.txid), cfg.funding_depth);
    assert_eq!(w.gateway.phase(), Phase::Operational);
    assert_eq!(w.bridge.phase(), Phase::Operational);
    assert_eq!(w.iot.phase(), Phase::Operational);
}

#[test]
fn revocations_follow_payments_in_order() {
    let mut w = reference();
    for n in 1..=4u64 {
        pay(&mut w, COIN / 10, toll_gate_node()).unwrap().unwrap();
        assert_eq!(w.bridge.revocation_chain().revealed(), n);
        assert_eq!(w.gateway.revocation_chain().revealed(), n);
        assert_eq!(w.gateway.revoked_bridge_commitments().len() as u64, n);
        assert_eq!(w.bridge.revoked_gateway_commitments().len() as u64, n);
    }
    let revoked: Vec<u64> = w
        .log
        .iter()
        .filter_map(|l| match l.event {
            Event::Revoked { state_index } => Some(state_index),
            _ => None,
        })
        .collect();
    assert_eq!(revoked, vec![0, 1, 2, 3]);
}

#[test]
fn negotiation_converges_by_midpoints() {
    let out = negotiate_close(1000, 500, 0, 5000).unwrap();
    assert_eq!(
        out.offers,
        vec![1000, 500, 750, 625, 687, 656, 671, 663, 667, 665, 666, 666]
    );
    assert_eq!(out.fee_sat, 666);
    assert_eq!(negotiate_close(800, 800, 0, 5000).unwrap().offers, vec![800, 800]);
}

#[test]
fn mutual_close_uses_negotiated_fee() {
    let mut cfg = ScenarioConfig::reference();
    cfg.close.as_mut().unwrap().fee_sat = 1000;
    cfg.close.as_mut().unwrap().bridge_fee_sat = Some(500);
    let r = iotln::harness::run_scenario(&cfg, 4).unwrap();
    assert!(r.passed, "{}", r.to_json());
    assert_eq!(r.closing.unwrap().fee_sat, Some(666));
}

proptest! {
    #[test]
    fn fee_is_exact_per_payment(amount in 1u64..=4 * COIN, permille in 0u16..=999) {
        let f = common::Fixture::new(5 * COIN, permille);
        let s0 = f.initial();
        let params = f.params;
        let fee = amount * permille as u64 / 1000;
        match s0.with_payment(&params, amount, Digest::sha256(b"h"), 100) {
            Ok(s1) => {
                prop_assert!(amount > fee);
                prop_assert_eq!(s1.balance_gateway_fees_sat, fee);
                prop_assert_eq!(s1.htlcs.last().unwrap().amount_sat, amount - fee);
                prop_assert_eq!(s1.balance_iot_sat, 5 * COIN - amount);
                prop_assert!(s1.check_conservation(5 * COIN).is_ok());
            }
            Err(_) => prop_assert!(amount <= fee),
        }
    }

    #[test]
    fn secrets_reveal_strictly_in_order(seed in any::<[u8; 32]>(), tries in prop::collection::vec(0u64..8, 1..20)) {
        let mut c = RevocationChain::new(seed);
        for i in tries {
            let before = c.revealed();
            match c.reveal(i) {
                Ok(s) => {
                    prop_assert_eq!(i, before);
                    prop_assert_eq!(c.revealed(), before + 1);
                    prop_assert!(s.matches(&c.point(i)));
                }
                Err(_) => {
                    prop_assert_ne!(i, before);
                    prop_assert_eq!(c.revealed(), before);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn live_payments_charge_exact_fees(
        amounts in prop::collection::vec(10_000u64..50_000_000, 1..4),
        permille in 0u16..=200,
    ) {
        let mut cfg = ScenarioConfig::reference();
        cfg.fee_rate_permille = permille;
        cfg.payments = amounts
            .iter()
            .map(|&a| iotln::harness::PaymentSpec { amount_sat: a, destination: None })
            .collect();
        let r = iotln::harness::run_scenario(&cfg, 9).unwrap();
        prop_assert!(r.passed, "{}", r.to_json());
        let fees: u64 = amounts.iter().map(|a| a * permille as u64 / 1000).sum();
        prop_assert_eq!(r.channel.balance_gateway_fees_sat, fees);
    }
}
