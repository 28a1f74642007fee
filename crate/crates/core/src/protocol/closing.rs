use serde::Serialize;

/// How to answer a `closing_signed` offer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offer {
    /// Propose this fee instead.
    Counter(u64),
    /// Take the counterparty's fee and echo it back signed.
    Accept(u64),
    /// The counterparty took our last fee; nothing left to send.
    Agreed(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("closing fee offer {offer} sat left the negotiation interval [{low}, {high}]")]
pub struct NegotiationDiverged {
    pub offer: u64,
    pub low: u64,
    pub high: u64,
}

/// One side of closing-fee negotiation.
///
/// The first responder answers with its own preference. After that each
/// side proposes `floor((own_last + received) / 2)`, and an offer within one
/// satoshi of our last one is accepted. Offers must stay inside `[min, max]`
/// and between the two previous offers, otherwise negotiation has diverged.
#[derive(Clone, Debug)]
pub struct FeeNegotiator {
    preference: u64,
    min: u64,
    max: u64,
    own_last: Option<u64>,
    received_last: Option<u64>,
}

impl FeeNegotiator {
    pub fn new(preference: u64, min: u64, max: u64) -> FeeNegotiator {
        FeeNegotiator {
            preference: preference.clamp(min, max),
            min,
            max,
            own_last: None,
            received_last: None,
        }
    }

    /// First offer of the side that opens negotiation.
    pub fn opening_offer(&mut self) -> u64 {
        self.own_last = Some(self.preference);
        self.preference
    }

    pub fn last_offer(&self) -> Option<u64> {
        self.own_last
    }

    pub fn respond(&mut self, received: u64) -> Result<Offer, NegotiationDiverged> {
        let (low, high) = match (self.own_last, self.received_last) {
            (Some(a), Some(b)) => (a.min(b).max(self.min), a.max(b).min(self.max)),
            _ => (self.min, self.max),
        };
        if received < low || received > high {
            return Err(NegotiationDiverged {
                offer: received,
                low,
                high,
            });
        }
        self.received_last = Some(received);
        let own = self.own_last.unwrap_or(self.preference);
        if Some(received) == self.own_last {
            return Ok(Offer::Agreed(received));
        }
        if own.abs_diff(received) <= 1 {
            self.own_last = Some(received);
            return Ok(Offer::Accept(received));
        }
        let next = match self.own_last {
            None => self.preference,
            Some(own) => (own + received) / 2,
        };
        self.own_last = Some(next);
        Ok(Offer::Counter(next))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NegotiationOutcome {
    pub fee_sat: u64,
    /// Every offer sent, alternating opener and responder.
    pub offers: Vec<u64>,
}

/// Runs a full negotiation between an opener and a responder without any
/// transport. Both sides share the bounds `[min, max]`.
pub fn negotiate_close(
    opener_pref: u64,
    responder_pref: u64,
    min: u64,
    max: u64,
) -> Result<NegotiationOutcome, NegotiationDiverged> {
    let mut sides = [
        FeeNegotiator::new(opener_pref, min, max),
        FeeNegotiator::new(responder_pref, min, max),
    ];
    let mut offer = sides[0].opening_offer();
    let mut offers = vec![offer];
    let mut turn = 1;
    // Midpoint steps halve the gap, so 128 rounds covers any u64 range.
    for _ in 0..128 {
        match sides[turn].respond(offer)? {
            Offer::Agreed(fee) => return Ok(NegotiationOutcome { fee_sat: fee, offers }),
            Offer::Accept(fee) => {
                offers.push(fee);
                return Ok(NegotiationOutcome { fee_sat: fee, offers });
            }
            Offer::Counter(fee) => {
                offers.push(fee);
                offer = fee;
            }
        }
        turn ^= 1;
    }
    unreachable!("midpoint negotiation converges within 128 rounds")
}
