use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contract::{Constraint, Contract};
use crate::hash::Hash;
use crate::identity::PartyId;
use crate::negotiation::{Offer, OfferItem, SessionId};
use crate::time::Timestamp;
use crate::trace::DocumentStore;

pub type OfferPredicate = Arc<dyn Fn(&Offer, &PolicyContext<'_>) -> bool + Send + Sync>;
/// Returns the items of a counter-offer, or `None` to pass.
pub type CounterFn = Arc<dyn Fn(&Offer, &PolicyContext<'_>) -> Option<Vec<OfferItem>> + Send + Sync>;
pub type ContractHandler = Arc<dyn Fn(&AcceptedContract<'_>) + Send + Sync>;

/// What a policy may consult besides the offer itself.
pub struct PolicyContext<'a> {
    pub me: &'a PartyId,
    pub documents: &'a DocumentStore,
    pub now: Timestamp,
    /// Every item validates against a template held in `documents`.
    pub valid: bool,
}

/// What a [`Policy::Handler`] sees once a session is Accepted.
#[derive(Debug)]
pub struct AcceptedContract<'a> {
    pub session: SessionId,
    pub contract: &'a Contract,
    pub contract_hash: Hash,
    pub offer_hash: &'a Hash,
    pub acceptance_hash: &'a Hash,
    pub counterparty: &'a PartyId,
}

/// Automation bound to a template. Rules bound to the templates of an
/// offer's contracts are tried in order; the first that decides wins and
/// anything undecided goes to the human queue.
#[derive(Clone)]
pub enum Policy {
    /// Accepts when the predicate holds and the offer is valid and
    /// acceptable as-is.
    AutoAccept(OfferPredicate),
    AutoReject(OfferPredicate),
    AutoCounter(CounterFn),
    /// Runs on each contract of this template after Accepted; never decides.
    Handler(ContractHandler),
    DeferToHuman,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::AutoAccept(_) => "AutoAccept",
            Policy::AutoReject(_) => "AutoReject",
            Policy::AutoCounter(_) => "AutoCounter",
            Policy::Handler(_) => "Handler",
            Policy::DeferToHuman => "DeferToHuman",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
    Counter(Vec<OfferItem>),
    Defer,
}

impl Decision {
    pub fn name(&self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
            Decision::Counter(_) => "counter",
            Decision::Defer => "defer",
        }
    }
}

/// Exactly one decision for `offer`.
pub fn decide<'a>(rules: impl IntoIterator<Item = &'a Policy>, offer: &Offer, ctx: &PolicyContext<'_>) -> Decision {
    for rule in rules {
        match rule {
            Policy::AutoAccept(p) if ctx.valid && offer.acceptable_contracts().is_some() && p(offer, ctx) => {
                return Decision::Accept
            }
            Policy::AutoReject(p) if p(offer, ctx) => return Decision::Reject,
            Policy::AutoCounter(f) => {
                if let Some(items) = f(offer, ctx) {
                    return Decision::Counter(items);
                }
            }
            Policy::DeferToHuman => return Decision::Defer,
            _ => {}
        }
    }
    Decision::Defer
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RuleAction {
    Accept,
    Reject,
    Defer,
}

/// A policy written in configuration: the action applies when every
/// contract of `template` in the offer has arguments matching `when`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub template: Hash,
    pub action: RuleAction,
    #[serde(default)]
    pub when: BTreeMap<String, Constraint>,
}

impl PolicyRule {
    pub fn matches(&self, offer: &Offer) -> bool {
        offer
            .contracts
            .iter()
            .filter_map(|item| match item {
                OfferItem::Contract(c) if c.template == self.template => Some(c),
                _ => None,
            })
            .all(|c| {
                self.when
                    .iter()
                    .all(|(key, constraint)| c.argument(key).is_some_and(|v| constraint.matches(v)))
            })
    }

    pub fn to_policy(&self) -> Policy {
        let rule = self.clone();
        let pred: OfferPredicate = Arc::new(move |o, _| rule.matches(o));
        match self.action {
            RuleAction::Accept => Policy::AutoAccept(pred),
            RuleAction::Reject => Policy::AutoReject(pred),
            RuleAction::Defer => Policy::DeferToHuman,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{ProposalContract, Value};

    fn ctx<'a>(me: &'a PartyId, documents: &'a DocumentStore) -> PolicyContext<'a> {
        PolicyContext {
            me,
            documents,
            now: Timestamp::from_millis(0),
            valid: true,
        }
    }

    fn offer(items: Vec<OfferItem>) -> Offer {
        Offer {
            session_id: SessionId(1),
            offer_index: 1,
            sender: PartyId::from_public_key(&[1; 32]),
            receiver: PartyId::from_public_key(&[2; 32]),
            contracts: items,
            valid_until: Timestamp::from_millis(0),
            prev_offer_hash: None,
        }
    }

    #[test]
    fn first_deciding_rule_wins() {
        let t = Hash::of_bytes(b"t");
        let cheap = PolicyRule {
            template: t.clone(),
            action: RuleAction::Accept,
            when: BTreeMap::from([(
                "price".to_string(),
                Constraint::range(Value::Integer(0), Value::Integer(100)),
            )]),
        };
        let rules = [Policy::Handler(Arc::new(|_| {})), cheap.to_policy(), Policy::AutoReject(Arc::new(|_, _| true))];
        let (me, docs) = (PartyId::from_public_key(&[2; 32]), DocumentStore::new());
        let ctx = ctx(&me, &docs);
        let hit = offer(vec![OfferItem::Contract(Contract::new(t.clone(), [("price".into(), Value::Integer(50))]))]);
        let miss = offer(vec![OfferItem::Contract(Contract::new(t.clone(), [("price".into(), Value::Integer(500))]))]);
        assert_eq!(decide(&rules, &hit, &ctx), Decision::Accept);
        assert_eq!(decide(&rules, &miss, &ctx), Decision::Reject);
        assert_eq!(decide(&[], &hit, &ctx), Decision::Defer);
        let invalid = PolicyContext { valid: false, ..ctx };
        assert_eq!(decide(&rules, &hit, &invalid), Decision::Reject);
    }

    #[test]
    fn auto_accept_skips_incomplete_proposals() {
        let t = Hash::of_bytes(b"t");
        let proposal = offer(vec![OfferItem::Proposal(ProposalContract::new(t, [("price".into(), Constraint::Any)]))]);
        let rules = [Policy::AutoAccept(Arc::new(|_, _| true))];
        let (me, docs) = (PartyId::from_public_key(&[2; 32]), DocumentStore::new());
        assert_eq!(decide(&rules, &proposal, &ctx(&me, &docs)), Decision::Defer);
    }
}
