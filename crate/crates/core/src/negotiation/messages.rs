use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::canonical::{self, CanonicalError, Document};
use crate::contract::{Contract, ContractDocument, ProposalContract};
use crate::hash::Hash;
use crate::identity::PartyId;
pub use crate::ids::SessionId;
use crate::time::Timestamp;

/// One contract body carried by an offer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OfferItem {
    Contract(Contract),
    Proposal(ProposalContract),
}

impl OfferItem {
    pub fn template(&self) -> &Hash {
        match self {
            OfferItem::Contract(c) => &c.template,
            OfferItem::Proposal(p) => &p.template,
        }
    }

    /// Complete items convert; incomplete proposals do not.
    pub fn to_contract(&self) -> Option<Contract> {
        match self {
            OfferItem::Contract(c) => Some(c.clone()),
            OfferItem::Proposal(p) => p.to_contract(),
        }
    }

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        match self {
            OfferItem::Contract(c) => c.canonical_value(),
            OfferItem::Proposal(p) => p.canonical_value(),
        }
    }

    fn authored_value(&self) -> Result<Json, CanonicalError> {
        match self {
            OfferItem::Contract(c) => canonical::tagged(Contract::KIND, c),
            OfferItem::Proposal(p) => canonical::tagged(ProposalContract::KIND, p),
        }
    }
}

/// `o(i,j)`: offer number `j` within session `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offer {
    pub session_id: SessionId,
    pub offer_index: u32,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub contracts: Vec<OfferItem>,
    pub valid_until: Timestamp,
    /// Envelope hash of offer `j - 1`; present iff `offer_index > 1`.
    pub prev_offer_hash: Option<Hash>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct OfferRecord {
    session_id: SessionId,
    offer_index: u32,
    sender: PartyId,
    receiver: PartyId,
    contracts: Vec<Json>,
    valid_until: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prev_offer_hash: Option<Hash>,
}

impl Offer {
    /// An offer with at least one incomplete proposal cannot be accepted as is.
    pub fn is_proposal_offer(&self) -> bool {
        self.contracts.iter().any(|c| c.to_contract().is_none())
    }

    /// All contracts, if the offer is acceptable as is.
    pub fn acceptable_contracts(&self) -> Option<Vec<Contract>> {
        self.contracts.iter().map(OfferItem::to_contract).collect()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.offer_index == 0 {
            return Err("offer index starts at 1".into());
        }
        if (self.offer_index == 1) != self.prev_offer_hash.is_none() {
            return Err("prevOfferHash must be present exactly when offerIndex > 1".into());
        }
        if self.contracts.is_empty() {
            return Err("an offer carries at least one contract".into());
        }
        if self.sender == self.receiver {
            return Err("sender and receiver must differ".into());
        }
        for item in &self.contracts {
            match item {
                OfferItem::Contract(c) => c.check()?,
                OfferItem::Proposal(p) => p.check()?,
            }
        }
        Ok(())
    }

    fn record(&self, canonical_items: bool) -> Result<OfferRecord, CanonicalError> {
        Ok(OfferRecord {
            session_id: self.session_id,
            offer_index: self.offer_index,
            sender: self.sender.clone(),
            receiver: self.receiver.clone(),
            contracts: self
                .contracts
                .iter()
                .map(|c| if canonical_items { c.canonical_value() } else { c.authored_value() })
                .collect::<Result<_, _>>()?,
            valid_until: self.valid_until,
            prev_offer_hash: self.prev_offer_hash.clone(),
        })
    }

    /// Pretty, author-ordered JSON (for display).
    pub fn to_authored_json(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(Self::KIND, &self.record(false)?)
    }
}

impl Document for Offer {
    const KIND: &'static str = "offer";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        self.check().map_err(CanonicalError::InvariantViolation)?;
        canonical::tagged(Self::KIND, &self.record(true)?)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let r: OfferRecord = canonical::untagged(Self::KIND, value)?;
        let contracts = r
            .contracts
            .into_iter()
            .map(|v| match ContractDocument::from_json(v)? {
                ContractDocument::Contract(c) => Ok(OfferItem::Contract(c)),
                ContractDocument::Proposal(p) => Ok(OfferItem::Proposal(p)),
                ContractDocument::Template(_) => Err(CanonicalError::InvariantViolation(
                    "offers carry contracts or proposals, not templates".into(),
                )),
            })
            .collect::<Result<_, CanonicalError>>()?;
        let offer = Offer {
            session_id: r.session_id,
            offer_index: r.offer_index,
            sender: r.sender,
            receiver: r.receiver,
            contracts,
            valid_until: r.valid_until,
            prev_offer_hash: r.prev_offer_hash,
        };
        offer.check().map_err(CanonicalError::InvariantViolation)?;
        Ok(offer)
    }
}

/// Body shared by acceptances and rejections: a binding to one offer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OfferBinding {
    pub session_id: SessionId,
    pub offer_index: u32,
    /// Envelope hash of the offer being answered.
    pub offer_hash: Hash,
    pub signer: PartyId,
}

/// `a(i,j)`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acceptance(pub OfferBinding);

/// `r(i,j)`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection(pub OfferBinding);

macro_rules! binding_document {
    ($ty:ident, $kind:literal) => {
        impl Document for $ty {
            const KIND: &'static str = $kind;

            fn canonical_value(&self) -> Result<Json, CanonicalError> {
                canonical::tagged(Self::KIND, &self.0)
            }

            fn from_value(value: Json) -> Result<Self, CanonicalError> {
                Ok($ty(canonical::untagged(Self::KIND, value)?))
            }
        }

        impl std::ops::Deref for $ty {
            type Target = OfferBinding;

            fn deref(&self) -> &OfferBinding {
                &self.0
            }
        }
    };
}

binding_document!(Acceptance, "acceptance");
binding_document!(Rejection, "rejection");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::Value;

    fn party(n: u8) -> PartyId {
        PartyId::from_public_key(&[n; 32])
    }

    fn offer() -> Offer {
        Offer {
            session_id: SessionId(5),
            offer_index: 1,
            sender: party(1),
            receiver: party(2),
            contracts: vec![OfferItem::Contract(Contract::new(
                Hash::of_bytes(b"t"),
                [("b".to_string(), Value::Integer(2)), ("a".to_string(), Value::Integer(1))],
            ))],
            valid_until: Timestamp::from_millis(1_000),
            prev_offer_hash: None,
        }
    }

    #[test]
    fn session_id_text() {
        assert_eq!(SessionId(5).to_string(), "00000000000000000000000000000005");
        assert_eq!("00000000000000000000000000000005".parse::<SessionId>().unwrap(), SessionId(5));
        assert!("5".parse::<SessionId>().is_err());
    }

    #[test]
    fn offer_round_trip_sorts_nested_arguments() {
        let o = offer();
        let bytes = o.canonical_bytes().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.find("\"key\":\"a\"").unwrap() < text.find("\"key\":\"b\"").unwrap());
        let back: Offer = canonical::decode(&bytes).unwrap();
        assert_eq!(back, o);
    }

    #[test]
    fn offer_invariants() {
        let mut o = offer();
        o.offer_index = 2;
        assert!(o.check().is_err());
        o.prev_offer_hash = Some(Hash::of_bytes(b"prev"));
        o.check().unwrap();
        o.contracts.clear();
        assert!(o.check().is_err());
        let mut o = offer();
        o.receiver = o.sender.clone();
        assert!(o.check().is_err());
    }
}
