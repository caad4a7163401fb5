use std::sync::Arc;

use conet_core::contract::Constraint;
use conet_core::identity::{Identity, SignedEnvelope, TrustRegistry};
use conet_core::negotiation::{
    model, parse_transcript, verify_transcript, write_transcript, Acceptance, NegotiationEngine,
    NegotiationError, Offer, OfferBinding, OfferItem, Rejection, SessionId, SessionState,
};
use conet_core::{Contract, Hash, ProposalContract, Timestamp, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const T0: i64 = 1_700_000_000_000;

fn at(offset_ms: i64) -> Timestamp {
    Timestamp::from_millis(T0 + offset_ms)
}

struct Parties {
    x: Identity,
    y: Identity,
    z: Identity,
    registry: Arc<TrustRegistry>,
}

fn parties() -> Parties {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let x = Identity::generate("x", &mut rng);
    let y = Identity::generate("y", &mut rng);
    let z = Identity::generate("z", &mut rng);
    let mut registry = TrustRegistry::new();
    for id in [&x, &y, &z] {
        registry.register(id, at(-1_000_000), at(1_000_000)).unwrap();
    }
    Parties { x, y, z, registry: Arc::new(registry) }
}

fn contract(price: i64) -> OfferItem {
    OfferItem::Contract(Contract::new(
        Hash::of_bytes(b"widget template"),
        [("price".to_string(), Value::Integer(price))],
    ))
}

fn offer(
    from: &Identity,
    to: &Identity,
    session: u128,
    index: u32,
    prev: Option<&SignedEnvelope>,
    valid_until: Timestamp,
    item: OfferItem,
) -> SignedEnvelope {
    from.sign_document(&Offer {
        session_id: SessionId(session),
        offer_index: index,
        sender: from.party_id().clone(),
        receiver: to.party_id().clone(),
        contracts: vec![item],
        valid_until,
        prev_offer_hash: prev.map(|e| e.envelope_hash().clone()),
    })
    .unwrap()
}

fn binding(signer: &Identity, session: u128, index: u32, offer: &SignedEnvelope) -> OfferBinding {
    OfferBinding {
        session_id: SessionId(session),
        offer_index: index,
        offer_hash: offer.envelope_hash().clone(),
        signer: signer.party_id().clone(),
    }
}

fn accept(signer: &Identity, session: u128, index: u32, offer: &SignedEnvelope) -> SignedEnvelope {
    signer.sign_document(&Acceptance(binding(signer, session, index, offer))).unwrap()
}

fn reject(signer: &Identity, session: u128, index: u32, offer: &SignedEnvelope) -> SignedEnvelope {
    signer.sign_document(&Rejection(binding(signer, session, index, offer))).unwrap()
}

#[test]
fn open_then_duplicate_and_expired_openings() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o51 = offer(&p.x, &p.z, 5, 1, None, at(10_000), contract(10));
    let applied = z.open_session(&o51, at(0)).unwrap();
    assert_eq!(applied.state, SessionState::OfferedByInitiator);
    assert_eq!(z.session(SessionId(5)).unwrap().to_move(), Some(p.z.party_id()));
    assert_eq!(z.open_session(&o51, at(1)), Err(NegotiationError::DuplicateSession(SessionId(5))));

    let stale = offer(&p.x, &p.z, 6, 1, None, at(-1), contract(10));
    assert!(matches!(z.open_session(&stale, at(0)), Err(NegotiationError::AlreadyExpired { .. })));
}

#[test]
fn counter_offer_rules() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o71 = offer(&p.y, &p.z, 7, 1, None, at(10_000), contract(10));
    z.open_session(&o71, at(0)).unwrap();

    let gap = offer(&p.z, &p.y, 7, 3, Some(&o71), at(10_000), contract(11));
    assert_eq!(z.counter_offer(&gap, at(1)), Err(NegotiationError::IndexGap { expected: 2, found: 3 }));

    let bad_link = offer(&p.z, &p.y, 7, 2, Some(&gap), at(10_000), contract(11));
    assert_eq!(z.counter_offer(&bad_link, at(1)), Err(NegotiationError::BadChainLink));

    let out_of_turn = offer(&p.y, &p.z, 7, 2, Some(&o71), at(10_000), contract(11));
    assert_eq!(
        z.counter_offer(&out_of_turn, at(1)),
        Err(NegotiationError::NotYourTurn(p.y.party_id().clone()))
    );

    let o72 = offer(&p.z, &p.y, 7, 2, Some(&o71), at(20_000), contract(12));
    assert_eq!(z.counter_offer(&o72, at(1)).unwrap().state, SessionState::OfferedByResponder);
    let s = z.session(SessionId(7)).unwrap();
    assert_eq!(s.live_offer_hash(), o72.envelope_hash());
    assert_eq!(s.to_move(), Some(p.y.party_id()));
    assert_eq!(s.deadline(), at(20_000), "a counter-offer refreshes the deadline");
}

#[test]
fn counter_after_deadline_is_session_expired() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o = offer(&p.y, &p.z, 7, 1, None, at(100), contract(10));
    z.open_session(&o, at(0)).unwrap();
    let c = offer(&p.z, &p.y, 7, 2, Some(&o), at(10_000), contract(11));
    assert!(matches!(z.counter_offer(&c, at(101)), Err(NegotiationError::SessionExpired { .. })));
}

#[test]
fn acceptance_binding_and_superseded_race() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o71 = offer(&p.y, &p.z, 7, 1, None, at(10_000), contract(10));
    z.open_session(&o71, at(0)).unwrap();
    let o72 = offer(&p.z, &p.y, 7, 2, Some(&o71), at(10_000), contract(12));
    z.counter_offer(&o72, at(1)).unwrap();

    // z's acceptance of the original offer races with its own counter-offer.
    let a71 = accept(&p.z, 7, 1, &o71);
    assert_eq!(
        z.accept(&a71, at(2)),
        Err(NegotiationError::SupersededOffer(o71.envelope_hash().clone()))
    );
    let s = z.session(SessionId(7)).unwrap();
    assert_eq!(s.state(), SessionState::OfferedByResponder, "not applied");
    assert_eq!(s.stale_answers().len(), 1, "but logged");

    let wrong_party = accept(&p.z, 7, 2, &o72);
    assert_eq!(
        z.accept(&wrong_party, at(3)),
        Err(NegotiationError::NotYourTurn(p.z.party_id().clone()))
    );

    let a72 = accept(&p.y, 7, 2, &o72);
    assert_eq!(z.accept(&a72, at(3)).unwrap().state, SessionState::Accepted);
    assert_eq!(
        z.accept(&a72, at(4)),
        Err(NegotiationError::SessionTerminal(SessionState::Accepted))
    );
    let r72 = reject(&p.y, 7, 2, &o72);
    assert_eq!(
        z.reject(&r72, at(4)),
        Err(NegotiationError::SessionTerminal(SessionState::Accepted))
    );
}

#[test]
fn expiry_boundary_is_strictly_after() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o = offer(&p.x, &p.z, 5, 1, None, at(1_000), contract(10));
    z.open_session(&o, at(0)).unwrap();
    assert!(matches!(z.expire(SessionId(5), at(1_000)), Err(NegotiationError::NotYetExpired { .. })));

    // Acceptable at exactly validUntil.
    let mut twin = z.clone();
    assert!(twin.accept(&accept(&p.z, 5, 1, &o), at(1_000)).is_ok());
    assert_eq!(
        twin.expire(SessionId(5), at(5_000)),
        Err(NegotiationError::SessionTerminal(SessionState::Accepted))
    );

    assert!(matches!(
        z.clone().accept(&accept(&p.z, 5, 1, &o), at(1_001)),
        Err(NegotiationError::SessionExpired { .. })
    ));
    assert_eq!(z.expire(SessionId(5), at(2_000)).unwrap().state, SessionState::Expired);
}

#[test]
fn rejection_is_terminal_and_allowed_on_proposals() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let proposal = OfferItem::Proposal(ProposalContract::new(
        Hash::of_bytes(b"widget template"),
        [("price".to_string(), Constraint::range(Value::Integer(1), Value::Integer(9)))],
    ));
    let o = offer(&p.x, &p.z, 5, 1, None, at(1_000), proposal);
    z.open_session(&o, at(0)).unwrap();
    assert_eq!(
        z.clone().accept(&accept(&p.z, 5, 1, &o), at(1)),
        Err(NegotiationError::IncompleteProposal)
    );
    let r = reject(&p.z, 5, 1, &o);
    assert_eq!(z.reject(&r, at(1)).unwrap().state, SessionState::Rejected);
    assert_eq!(z.reject(&r, at(2)), Err(NegotiationError::SessionTerminal(SessionState::Rejected)));
    // A rejected session id cannot be reopened.
    let again = offer(&p.x, &p.z, 5, 1, None, at(1_000), contract(3));
    assert_eq!(z.open_session(&again, at(3)), Err(NegotiationError::DuplicateSession(SessionId(5))));
}

#[test]
fn forged_and_impersonating_messages() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o = offer(&p.x, &p.z, 5, 1, None, at(1_000), contract(10));
    // y signs an offer that names x as sender.
    let forged = p
        .y
        .sign_document(&Offer {
            session_id: SessionId(5),
            offer_index: 1,
            sender: p.x.party_id().clone(),
            receiver: p.z.party_id().clone(),
            contracts: vec![contract(1)],
            valid_until: at(1_000),
            prev_offer_hash: None,
        })
        .unwrap();
    assert!(matches!(z.open_session(&forged, at(0)), Err(NegotiationError::Malformed(_))));

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let stranger = Identity::generate("stranger", &mut rng);
    let unknown = offer(&stranger, &p.z, 9, 1, None, at(1_000), contract(1));
    assert!(matches!(z.open_session(&unknown, at(0)), Err(NegotiationError::BadSignature(_))));

    z.open_session(&o, at(0)).unwrap();
    assert_eq!(z.session(SessionId(99)).unwrap_err(), NegotiationError::UnknownSession(SessionId(99)));
}

#[test]
fn fig4_transcripts_verify_and_tampering_is_located() {
    let p = parties();
    let mut z = NegotiationEngine::new(p.registry.clone());
    let o51 = offer(&p.x, &p.z, 5, 1, None, at(10_000), contract(10));
    let o71 = offer(&p.y, &p.z, 7, 1, None, at(10_000), contract(20));
    z.receive(&o51, at(0)).unwrap();
    z.receive(&o71, at(0)).unwrap();
    let a51 = accept(&p.z, 5, 1, &o51);
    z.receive(&a51, at(1)).unwrap();
    let o72 = offer(&p.z, &p.y, 7, 2, Some(&o71), at(10_000), contract(25));
    z.receive(&o72, at(1)).unwrap();

    let t5 = z.transcript(SessionId(5)).unwrap();
    assert_eq!(t5, &[o51.clone(), a51.clone()]);
    let summary = verify_transcript(t5, &p.registry, at(0)).unwrap();
    assert_eq!(summary.final_state, SessionState::Accepted);
    assert_eq!(summary.states, vec![SessionState::OfferedByInitiator, SessionState::Accepted]);

    let t7 = z.transcript(SessionId(7)).unwrap().to_vec();
    let summary = verify_transcript(&t7, &p.registry, at(0)).unwrap();
    assert_eq!(summary.final_state, SessionState::OfferedByResponder);

    let bytes = write_transcript(&t7);
    assert_eq!(parse_transcript(&bytes).unwrap(), t7);
    let second_line = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    let mut tampered = bytes.clone();
    tampered[second_line + 40] ^= 0x01;
    let err = parse_transcript(&tampered)
        .and_then(|t| verify_transcript(&t, &p.registry, at(0)))
        .unwrap_err();
    assert_eq!(err.index, 1);

    // Reordering breaks the chain at the first out-of-place entry.
    let reordered = vec![o51, o72, a51];
    assert_eq!(verify_transcript(&reordered, &p.registry, at(0)).unwrap_err().index, 1);
}

#[test]
fn differential_fuzz_matches_reference_model() {
    let report = model::run_fuzz(0xC0FFEE, 10_000);
    assert!(report.passed(), "{:#?}", report.mismatches);
    assert_eq!(report.sequences, 10_000);
}
