//! Properties of contracts, proposals and their canonical encoding.

use std::sync::Arc;

use conet_core::canonical::{self, Document};
use conet_core::contract::{
    refine_proposal, validate_contract, Constraint, Element, Finding, KeyConstraint, RefineError, Refined,
    TypeRegistry,
};
use conet_core::identity::{Identity, TrustRegistry};
use conet_core::negotiation::{Acceptance, NegotiationEngine, Offer, OfferBinding, OfferItem, SessionId};
use conet_core::{Contract, Hash, ProposalContract, Template, Timestamp, Value};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn template_hash() -> Hash {
    Hash::of_bytes(b"proposal template")
}

fn int_constraint() -> impl Strategy<Value = Constraint> {
    prop_oneof![
        (-20i64..20).prop_map(|v| Constraint::Exact(Value::Integer(v))),
        (-20i64..20, 0i64..15).prop_map(|(lo, w)| Constraint::range(Value::Integer(lo), Value::Integer(lo + w))),
        proptest::collection::btree_set(-20i64..20, 1..5)
            .prop_map(|s| Constraint::OneOf(s.into_iter().map(Value::Integer).collect())),
        Just(Constraint::Any),
        Just(Constraint::Regex("[a-c]+".into())),
    ]
}

fn probe_values() -> Vec<Value> {
    let mut v: Vec<Value> = (-25..25).map(Value::Integer).collect();
    v.extend(["a", "abc", "cab", "d", ""].map(Value::text));
    v
}

fn assigned_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        4 => (-25i64..25).prop_map(Value::Integer),
        1 => prop::sample::select(vec!["a", "abc", "d"]).prop_map(Value::text),
    ]
}

pub fn proposal() -> impl Strategy<Value = ProposalContract> {
    proptest::collection::vec(int_constraint(), 1..6).prop_map(|cs| {
        ProposalContract::new(
            template_hash(),
            cs.into_iter().enumerate().map(|(i, c)| (format!("k{i}"), c)),
        )
    })
}

/// A proposal plus assignments, mostly to existing keys.
pub fn refinement() -> impl Strategy<Value = (ProposalContract, Vec<(String, Value)>)> {
    proposal().prop_flat_map(|p| {
        let n = p.constraints.len();
        let key = prop_oneof![9 => (0..n).prop_map(|i| format!("k{i}")), 1 => Just("missing".to_string())];
        let assignments = proptest::collection::vec((key, assigned_value()), 0..=n + 1);
        (Just(p), assignments)
    })
}

/// The outcome refinement must have, computed from the rules directly.
fn expected_error(p: &ProposalContract, assignments: &[(String, Value)]) -> Option<RefineError> {
    let mut seen: Vec<(&str, &Value)> = Vec::new();
    for (k, v) in assignments {
        let Some(c) = p.constraints.iter().find(|c| &c.key == k) else {
            return Some(RefineError::UnknownKey(k.clone()));
        };
        if !c.constraint.matches(v) {
            return Some(RefineError::ConstraintViolated(k.clone()));
        }
        if seen.iter().any(|(sk, sv)| *sk == k && *sv != v) {
            return Some(RefineError::ConstraintViolated(k.clone()));
        }
        seen.push((k, v));
    }
    None
}

/// Refinement only narrows: every refined constraint admits a subset of
/// what the original admits, and unassigned keys are untouched.
pub fn refinement_never_widens_case(p: &ProposalContract, assignments: &[(String, Value)]) -> Result<(), TestCaseError> {
    match refine_proposal(p, assignments) {
        Err(e) => prop_assert_eq!(Some(e), expected_error(p, assignments)),
        Ok(refined) => {
            prop_assert_eq!(expected_error(p, assignments), None);
            let complete = matches!(refined, Refined::Contract(_));
            let r = refined.into_proposal();
            prop_assert_eq!(r.constraints.len(), p.constraints.len());
            for KeyConstraint { key, constraint } in &p.constraints {
                let narrowed = r.constraint(key).expect("keys are kept");
                for v in probe_values() {
                    prop_assert!(!narrowed.matches(&v) || constraint.matches(&v), "{key} widened to admit {v}");
                }
                match assignments.iter().find(|(k, _)| k == key) {
                    Some((_, v)) => prop_assert_eq!(narrowed, &Constraint::Exact(v.clone())),
                    None => prop_assert_eq!(narrowed, constraint),
                }
            }
            // An empty assignment list leaves the proposal as it is.
            let all_exact = r.constraints.iter().all(|c| c.constraint.is_exact());
            prop_assert_eq!(complete, all_exact && !assignments.is_empty());
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn refinement_never_widens((p, assignments) in refinement()) {
        refinement_never_widens_case(&p, &assignments)?;
    }
}

struct Pair {
    x: Identity,
    y: Identity,
    registry: Arc<TrustRegistry>,
}

fn pair() -> Pair {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = Identity::generate("x", &mut rng);
    let y = Identity::generate("y", &mut rng);
    let mut registry = TrustRegistry::new();
    for id in [&x, &y] {
        registry.register(id, Timestamp::from_millis(0), Timestamp::from_millis(i64::MAX / 2)).unwrap();
    }
    Pair { x, y, registry: Arc::new(registry) }
}

/// An offer of `p` can be accepted exactly when `p` converts to a contract.
pub fn acceptable_iff_converts_case(p: &ProposalContract) -> Result<(), TestCaseError> {
    let Pair { x, y, registry } = pair();
    let mut engine = NegotiationEngine::new(registry);
    let now = Timestamp::from_millis(1_000);
    let offer = x
        .sign_document(&Offer {
            session_id: SessionId(1),
            offer_index: 1,
            sender: x.party_id().clone(),
            receiver: y.party_id().clone(),
            contracts: vec![OfferItem::Proposal(p.clone())],
            valid_until: Timestamp::from_millis(60_000),
            prev_offer_hash: None,
        })
        .unwrap();
    engine.receive(&offer, now).unwrap();
    let acceptance = y
        .sign_document(&Acceptance(OfferBinding {
            session_id: SessionId(1),
            offer_index: 1,
            offer_hash: offer.envelope_hash().clone(),
            signer: y.party_id().clone(),
        }))
        .unwrap();
    prop_assert_eq!(engine.receive(&acceptance, now).is_ok(), p.to_contract().is_some());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn proposal_offer_is_acceptable_iff_it_converts(p in proposal()) {
        acceptable_iff_converts_case(&p)?;
    }
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Integer),
        "[ -~\u{e9}\u{1f4dc}\n\t\"\\\\]{0,12}".prop_map(Value::text),
        (any::<i32>(), 0u32..6).prop_map(|(m, s)| Value::Decimal(conet_core::contract::Decimal::from_scaled(m.into(), s))),
        (0i64..4_102_444_800_000).prop_map(|ms| Value::Timestamp(Timestamp::from_millis(ms))),
        any::<[u8; 8]>().prop_map(|b| Value::Reference(Hash::of_bytes(&b))),
        "[a-z]{1,8}".prop_map(Value::token),
    ]
}

fn contract() -> impl Strategy<Value = Contract> {
    proptest::collection::btree_map("[a-z][a-zA-Z0-9_]{0,6}", value(), 0..8)
        .prop_map(|args| Contract::new(template_hash(), args))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn canonical_encoding_round_trips_and_ignores_argument_order(c in contract(), seed in any::<u64>()) {
        let bytes = c.canonical_bytes().unwrap();
        let decoded: Contract = canonical::decode(&bytes).unwrap();
        prop_assert_eq!(&decoded, &c);
        prop_assert_eq!(decoded.canonical_bytes().unwrap(), bytes.clone());

        let mut shuffled = c.clone();
        use rand::seq::SliceRandom;
        shuffled.arguments.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert_eq!(shuffled.hash().unwrap(), Hash::of_bytes(&bytes));

        let pretty = serde_json::to_vec_pretty(&c.canonical_value().unwrap()).unwrap();
        prop_assert!(canonical::decode::<Contract>(&pretty).is_err() || pretty == bytes);
        prop_assert_eq!(canonical::parse::<Contract>(&pretty).unwrap(), c);
    }

    #[test]
    fn contracts_built_from_their_template_validate(n in 1usize..6, drop in any::<prop::sample::Index>()) {
        let elements: Vec<Element> = (0..n).map(|i| Element::parameter(format!("p{i}"), "int")).collect();
        let template = Template::new("t", elements);
        let full = Contract::new(template.hash().unwrap(), (0..n).map(|i| (format!("p{i}"), Value::Integer(i as i64))));
        let types = TypeRegistry::builtin();
        prop_assert!(validate_contract(&full, &template, &types).unwrap().is_valid());

        let gone = drop.index(n);
        let mut partial = full.clone();
        partial.arguments.retain(|a| a.key != format!("p{gone}"));
        let report = validate_contract(&partial, &template, &types).unwrap();
        prop_assert_eq!(report.findings, vec![Finding::MissingArgument(format!("p{gone}"))]);
    }
}
