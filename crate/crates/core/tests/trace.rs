use conet_core::identity::{Identity, TrustRegistry};
use conet_core::negotiation::{Offer, OfferItem, SessionId};
use conet_core::trace::{
    accept_push, handle_trace_request, oracle, push_referenced, trace_contract, Answer, DisclosurePolicy,
    DocumentStore, HashAnswer, LocalPeer, LocalPeers, Query, Redirect, RequestId, Resolution, TraceClient,
    TraceError, TraceJob, TraceOptions, TraceRequest,
};
use conet_core::{Contract, Hash, Timestamp, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const NOW: Timestamp = Timestamp::from_millis(1_700_000_000_000);

struct Fixture {
    me: Identity,
    sender: Identity,
    mirror: Identity,
    registry: TrustRegistry,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let me = Identity::generate("me", &mut rng);
    let sender = Identity::generate("sender", &mut rng);
    let mirror = Identity::generate("mirror", &mut rng);
    let mut registry = TrustRegistry::new();
    for id in [&me, &sender, &mirror] {
        registry
            .register(id, Timestamp::from_millis(0), Timestamp::from_millis(i64::MAX))
            .unwrap();
    }
    Fixture { me, sender, mirror, registry }
}

fn contract_referencing(docs: &[&[u8]]) -> Contract {
    Contract::new(
        Hash::of_bytes(b"template"),
        docs.iter()
            .enumerate()
            .map(|(i, d)| (format!("ref{i}"), Value::Reference(Hash::of_bytes(d)))),
    )
}

fn store_with(docs: &[(&[u8], Option<DisclosurePolicy>)]) -> DocumentStore {
    let mut s = DocumentStore::new();
    for (bytes, policy) in docs {
        let (h, _) = s.insert(bytes.to_vec());
        if let Some(p) = policy {
            s.set_policy(h, p.clone());
        }
    }
    s
}

#[test]
fn all_known_issues_no_requests() {
    let f = fixture();
    let contract = contract_referencing(&[b"a", b"b"]);
    let mut mine = store_with(&[(b"template", None), (b"a", None), (b"b", None)]);
    let mut peers = LocalPeers::new(&f.me, &f.registry, NOW);
    let report = trace_contract(&contract, "sender", &mut mine, &mut peers, TraceOptions::default());
    assert_eq!(report.requests, 0);
    assert_eq!(report.known(), 3);
    assert!(peers.log.is_empty());
}

#[test]
fn fetch_deny_and_idempotent_repeat() {
    let f = fixture();
    let contract = contract_referencing(&[b"public doc", b"secret doc"]);
    let hint_template = Hash::of_bytes(b"nda template");
    let theirs = store_with(&[
        (b"template", Some(DisclosurePolicy::Public)),
        (b"public doc", Some(DisclosurePolicy::Public)),
        (
            b"secret doc",
            Some(DisclosurePolicy::PartiesOnly {
                parties: vec![f.sender.party_id().clone()],
                template: Some(hint_template.clone()),
            }),
        ),
    ]);
    let mut mine = DocumentStore::new();
    let mut peers = LocalPeers::new(&f.me, &f.registry, NOW);
    peers.add("sender", LocalPeer { identity: f.sender.clone(), store: theirs });

    let first = trace_contract(&contract, "sender", &mut mine, &mut peers, TraceOptions::default());
    assert_eq!(first.requests, 1, "one batched request");
    assert_eq!(first.fetched(), 2);
    match &first.resolutions[&Hash::of_bytes(b"secret doc")] {
        Resolution::Denied { hint, template, .. } => {
            assert!(hint.contains(&hint_template.to_string()), "hint names the template to negotiate");
            assert_eq!(template.as_ref(), Some(&hint_template));
        }
        other => panic!("{other:?}"),
    }
    assert!(mine.contains(&Hash::of_bytes(b"public doc")));

    let second = trace_contract(&contract, "sender", &mut mine, &mut peers, TraceOptions::default());
    assert_eq!(second.fetched(), 0);
    assert_eq!(second.known(), 2);
    // Only the denied hash is asked for again.
    assert_eq!(second.requests, 1);
    for h in mine.hashes() {
        assert!(h.matches(mine.get(h).unwrap()), "content-address integrity");
    }
}

#[test]
fn redirects_are_followed_and_cycles_terminate() {
    let f = fixture();
    let contract = contract_referencing(&[b"mirrored", b"looping"]);
    let looping = Hash::of_bytes(b"looping");
    let mut sender_store = store_with(&[(b"template", Some(DisclosurePolicy::Public))]);
    sender_store.set_redirect(Hash::of_bytes(b"mirrored"), Redirect { locator: "mirror".into(), hint: "cdn".into() });
    sender_store.set_redirect(looping.clone(), Redirect { locator: "mirror".into(), hint: "cdn".into() });
    let mut mirror_store = store_with(&[(b"mirrored", Some(DisclosurePolicy::Public))]);
    mirror_store.set_redirect(looping.clone(), Redirect { locator: "sender".into(), hint: "back".into() });

    let mut mine = DocumentStore::new();
    let mut peers = LocalPeers::new(&f.me, &f.registry, NOW);
    peers.add("sender", LocalPeer { identity: f.sender.clone(), store: sender_store });
    peers.add("mirror", LocalPeer { identity: f.mirror.clone(), store: mirror_store });
    let report = trace_contract(&contract, "sender", &mut mine, &mut peers, TraceOptions::default());
    assert_eq!(
        report.resolutions[&Hash::of_bytes(b"mirrored")],
        Resolution::Fetched { from: "mirror".into() }
    );
    assert_eq!(report.resolutions[&looping], Resolution::RedirectCycle { locator: "sender".into() });
    assert_eq!(report.requests, 2, "both redirected hashes share one request to the mirror");
}

/// Always redirects to a fresh locator.
struct EndlessRedirects;

impl TraceClient for EndlessRedirects {
    fn query(&mut self, q: &Query) -> Result<Vec<HashAnswer>, String> {
        Ok(q.hashes
            .iter()
            .map(|h| HashAnswer {
                hash: h.clone(),
                result: Answer::Redirect {
                    locator: format!("{}+", q.locator),
                    hint: String::new(),
                },
            })
            .collect())
    }
}

#[test]
fn redirect_depth_is_bounded() {
    let contract = contract_referencing(&[]);
    let mut mine = DocumentStore::new();
    let report = trace_contract(&contract, "s", &mut mine, &mut EndlessRedirects, TraceOptions::default());
    assert_eq!(report.requests, 5, "initial request plus four redirects");
    assert!(matches!(
        report.resolutions[&Hash::of_bytes(b"template")],
        Resolution::DepthExceeded { .. }
    ));
}

/// Answers with the wrong bytes for the first hash and fails when asked
/// anywhere else.
struct Lying;

impl TraceClient for Lying {
    fn query(&mut self, q: &Query) -> Result<Vec<HashAnswer>, String> {
        if q.locator != "liar" {
            return Err("connection refused".into());
        }
        Ok(vec![
            HashAnswer {
                hash: q.hashes[0].clone(),
                result: Answer::Data(b"not it".to_vec()),
            },
            HashAnswer {
                hash: q.hashes[1].clone(),
                result: Answer::Redirect {
                    locator: "down".into(),
                    hint: String::new(),
                },
            },
        ])
    }
}

#[test]
fn corrupt_data_and_transport_errors_are_per_hash() {
    let contract = contract_referencing(&[b"x", b"y"]);
    let mut mine = store_with(&[(b"template", None)]);
    let job = TraceJob::for_contract(&contract, "liar", &mine, TraceOptions::default());
    let report = conet_core::trace::run_trace(job, &mut mine, &mut Lying);
    let outcomes: Vec<&Resolution> = report.resolutions.values().collect();
    assert!(outcomes.iter().any(|r| matches!(r, Resolution::Corrupt { .. })));
    assert!(outcomes.iter().any(|r| matches!(r, Resolution::Transport { .. })));
    assert_eq!(mine.len(), 1, "corrupt bytes are discarded");
}

#[test]
fn unknown_hash_is_denied_and_bad_requests_fail() {
    let f = fixture();
    let store = DocumentStore::new();
    let req = TraceRequest {
        request_id: RequestId(1),
        requester: f.me.party_id().clone(),
        hashes: vec![Hash::of_bytes(b"nothing")],
        reply_to: None,
        evidence: vec![],
    };
    let env = f.me.sign_document(&req).unwrap();
    let answer = handle_trace_request(&env, &store, &f.registry, f.sender.party_id(), NOW).unwrap();
    assert_eq!(answer.answers[0].result, Answer::denied("unknown document"));

    let impostor = f.mirror.sign_document(&req).unwrap();
    assert!(matches!(
        handle_trace_request(&impostor, &store, &f.registry, f.sender.party_id(), NOW),
        Err(TraceError::Malformed(_))
    ));
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let stranger = Identity::generate("stranger", &mut rng);
    let unknown = stranger.sign_document(&req).unwrap();
    assert!(matches!(
        handle_trace_request(&unknown, &store, &f.registry, f.sender.party_id(), NOW),
        Err(TraceError::BadSignature(_))
    ));
}

#[test]
fn preemptive_push_counts_and_dedups() {
    let f = fixture();
    let contract = contract_referencing(&[b"one", b"two", b"private"]);
    let store = store_with(&[
        (b"one", Some(DisclosurePolicy::Public)),
        (b"two", Some(DisclosurePolicy::Public)),
        (b"private", None),
    ]);
    let offer = Offer {
        session_id: SessionId(1),
        offer_index: 1,
        sender: f.sender.party_id().clone(),
        receiver: f.me.party_id().clone(),
        contracts: vec![OfferItem::Contract(contract)],
        valid_until: NOW,
        prev_offer_hash: None,
    };
    assert_eq!(push_referenced(&offer, &store, true).documents.len(), 2);
    assert_eq!(push_referenced(&offer, &store, false).documents.len(), 0);
    let mut receiver = store_with(&[(b"one", None)]);
    assert_eq!(accept_push(&push_referenced(&offer, &store, true), &mut receiver), 1);
    assert_eq!(receiver.len(), 2);
}

#[test]
fn store_persists_and_rejects_tampered_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = store_with(&[(b"alpha", Some(DisclosurePolicy::Public)), (b"beta", None)]);
    store.set_redirect(Hash::of_bytes(b"gamma"), Redirect { locator: "sim://g".into(), hint: "g".into() });
    store.save(dir.path()).unwrap();
    assert_eq!(DocumentStore::load(dir.path()).unwrap(), store);

    let victim = dir.path().join(Hash::of_bytes(b"beta").hex_digest());
    std::fs::write(&victim, b"BETA").unwrap();
    assert!(DocumentStore::load(dir.path()).is_err());
}

#[test]
fn randomized_policy_tables_never_over_disclose() {
    let report = oracle::run_disclosure_fuzz(2024, 1_000);
    assert!(report.passed(), "{:#?}", report.failures);
    assert_eq!(report.cases, 1_000);
}
