use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use conet_core::agent::admin::{self, Method};
use conet_core::agent::stc::{self, walk_chain, ChainError};
use conet_core::agent::store::{parse_log, FaultyBackend};
use conet_core::agent::{
    accept_sound_transitions, Agent, AgentError, AgentParts, EventKind, Evidence, MemoryBackend, MessageStore,
    OfferSpec, Policy, Quarantine,
};
use conet_core::contract::Element;
use conet_core::identity::{Identity, PartyId, SignedEnvelope, TrustRegistry};
use conet_core::negotiation::{OfferItem, SessionId, SessionState};
use conet_core::net::{Cluster, Endpoint, SimNetwork};
use conet_core::trace::DocumentStore;
use conet_core::{Constraint, Contract, Document, Hash, ProposalContract, Template, Timestamp, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

const T0: Timestamp = Timestamp::from_millis(1_800_000_000_000);
const TOKEN: &str = "secret";

fn widget() -> Template {
    Template::new(
        "Widget Sale",
        vec![
            Element::parameter("price", "int"),
            Element::parameter("qty", "positiveInt"),
            Element::provision("The buyer pays ${price} for ${qty} widgets."),
        ],
    )
}

struct World {
    net: SimNetwork,
    cluster: Cluster,
    ids: BTreeMap<&'static str, Identity>,
    template: Hash,
}

fn identities() -> (BTreeMap<&'static str, Identity>, Arc<TrustRegistry>) {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut registry = TrustRegistry::new();
    let mut ids = BTreeMap::new();
    for name in ["a", "b", "c"] {
        let id = Identity::generate(name, &mut rng);
        registry
            .register(&id, Timestamp::from_millis(0), Timestamp::from_millis(i64::MAX / 2))
            .unwrap();
        ids.insert(name, id);
    }
    (ids, Arc::new(registry))
}

fn parts(name: &str, ids: &BTreeMap<&'static str, Identity>, registry: &Arc<TrustRegistry>) -> AgentParts {
    let mut p = AgentParts::new(ids[name].clone(), Endpoint::sim(name), registry.clone());
    for (peer, id) in ids {
        if *peer != name {
            p.peers.insert(id.party_id().clone(), Endpoint::sim(*peer));
        }
    }
    p.documents.insert_document(&widget()).unwrap();
    p.seed = name.as_bytes()[0] as u64;
    p
}

fn world(b_policies: Vec<Policy>) -> World {
    let (ids, registry) = identities();
    let template = widget().hash().unwrap();
    let mut net = SimNetwork::new(T0, 1);
    let mut cluster = Cluster::new();
    for name in ["a", "b"] {
        let mut p = parts(name, &ids, &registry);
        if name == "b" {
            p.policies = b_policies.iter().map(|pol| (template.clone(), pol.clone())).collect();
        }
        cluster.add_agent(&mut net, Agent::in_memory(p).unwrap());
    }
    World {
        net,
        cluster,
        ids,
        template,
    }
}

impl World {
    fn party(&self, name: &str) -> PartyId {
        self.ids[name].party_id().clone()
    }

    fn item(&self, price: i64) -> OfferItem {
        OfferItem::Contract(Contract::new(
            self.template.clone(),
            [("price".into(), Value::Integer(price)), ("qty".into(), Value::Integer(3))],
        ))
    }

    fn offer(&mut self, from: &str, to: &str, items: Vec<OfferItem>, validity: Duration) -> SessionId {
        let now = self.net.now();
        let mut spec = OfferSpec::new(self.party(to), items);
        spec.validity = Some(validity);
        let (id, out) = self.cluster.agent_mut(from).make_offer(spec, now).unwrap();
        self.net.send_all(&Endpoint::sim(from), out).unwrap();
        id
    }

    fn settle(&mut self) {
        self.net.run_until_idle(Duration::from_secs(60), &mut self.cluster);
    }

    fn state(&self, name: &str, id: SessionId) -> SessionState {
        self.cluster.agent(name).engine().session(id).unwrap().state()
    }

    fn admin(&mut self, method: Method, path: &str, body: serde_json::Value) -> admin::Response {
        let now = self.net.now();
        let resp = admin::handle(
            self.cluster.agent_mut("b"),
            TOKEN,
            method,
            path,
            Some(TOKEN),
            body.to_string().as_bytes(),
            now,
        );
        self.net.send_all(&Endpoint::sim("b"), resp.outgoing.clone()).unwrap();
        resp
    }
}

fn cheap() -> Policy {
    Policy::AutoAccept(Arc::new(|offer, _| {
        offer
            .contracts
            .iter()
            .filter_map(OfferItem::to_contract)
            .all(|c| matches!(c.argument("price"), Some(Value::Integer(p)) if *p <= 100))
    }))
}

#[test]
fn auto_accept_sends_acceptance_and_runs_handler_once() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let handler = Policy::Handler(Arc::new(move |c| {
        assert!(c.contract.argument("price").is_some());
        seen.fetch_add(1, Ordering::SeqCst);
    }));
    let mut w = world(vec![handler, cheap()]);
    let item = w.item(90);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    assert_eq!(w.state("a", id), SessionState::OfferedByInitiator);
    w.settle();
    assert_eq!(w.state("a", id), SessionState::Accepted);
    assert_eq!(w.state("b", id), SessionState::Accepted);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert!(w.cluster.agent("b").pending().is_empty());
    // Both sides archive the contract and both signed envelopes.
    let session = w.cluster.agent("a").engine().session(id).unwrap();
    let contract_hash = session.live_offer().acceptable_contracts().unwrap()[0].hash().unwrap();
    for name in ["a", "b"] {
        let docs = w.cluster.agent(name).documents();
        assert!(docs.contains(&contract_hash));
        assert!(docs.contains(session.live_offer_hash()));
        assert!(docs.contains(session.terminal_message().unwrap().envelope_hash()));
    }
}

#[test]
fn unmatched_offer_waits_for_a_human() {
    let mut w = world(vec![cheap()]);
    let item = w.item(500);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    assert_eq!(w.state("b", id), SessionState::OfferedByInitiator);
    assert!(w.cluster.agent("b").pending().contains_key(&id));
    assert!(w
        .cluster
        .agent("b")
        .events()
        .iter()
        .any(|e| matches!(e.kind, EventKind::Pending { session, .. } if session == id)));

    let resp = w.admin(Method::Post, &format!("/sessions/{id}/decision"), json!({"action": "accept"}));
    assert_eq!(resp.status, 200, "{}", resp.body);
    assert_eq!(resp.body["state"], "accepted");
    w.settle();
    assert_eq!(w.state("a", id), SessionState::Accepted);

    let again = w.admin(Method::Post, &format!("/sessions/{id}/decision"), json!({"action": "reject"}));
    assert_eq!((again.status, again.body["error"].as_str()), (409, Some("SessionNotPending")));
}

#[test]
fn admin_errors_and_ordering() {
    let mut w = world(vec![Policy::DeferToHuman]);
    let (i1, i2) = (w.item(1), w.item(2));
    let late = w.offer("a", "b", vec![i1], Duration::from_secs(300));
    let soon = w.offer("a", "b", vec![i2], Duration::from_secs(60));
    w.settle();

    let now = w.net.now();
    let denied = admin::handle(w.cluster.agent_mut("b"), TOKEN, Method::Get, "/pending", Some("wrong"), b"", now);
    assert_eq!(denied.status, 401);
    let none = admin::handle(w.cluster.agent_mut("b"), TOKEN, Method::Get, "/pending", None, b"", now);
    assert_eq!(none.status, 401);

    let pending = w.admin(Method::Get, "/pending", json!(null));
    let order: Vec<String> = pending.body.as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(order, vec![soon.to_string(), late.to_string()]);

    let unknown = w.admin(Method::Get, &format!("/sessions/{}", SessionId(99)), json!(null));
    assert_eq!(unknown.status, 404);
    let listed = w.admin(Method::Get, "/sessions", json!(null));
    assert_eq!(listed.body.as_array().unwrap().len(), 2);

    let rendered = w.admin(Method::Get, &format!("/sessions/{late}/render"), json!(null));
    assert_eq!(rendered.body["items"][0]["text"], "The buyer pays 1 for 3 widgets.");

    let bad = w.admin(
        Method::Post,
        &format!("/sessions/{late}/decision"),
        json!({"action": "counter", "assignments": {"qty": {"integer": 0}}}),
    );
    assert_eq!((bad.status, bad.body["error"].as_str()), (422, Some("ConstraintViolated")));
    let stray = w.admin(
        Method::Post,
        &format!("/sessions/{late}/decision"),
        json!({"action": "counter", "assignments": {"colour": {"text": "red"}}}),
    );
    assert_eq!(stray.status, 422);
    let malformed = w.admin(Method::Post, &format!("/sessions/{late}/decision"), json!({"action": "shrug"}));
    assert_eq!(malformed.status, 400);

    let countered = w.admin(
        Method::Post,
        &format!("/sessions/{late}/decision"),
        json!({"action": "counter", "assignments": {"price": {"integer": 7}}}),
    );
    assert_eq!(countered.status, 200, "{}", countered.body);
    w.settle();
    assert_eq!(w.state("a", late), SessionState::OfferedByResponder);
    let live = w.cluster.agent("a").engine().session(late).unwrap().live_offer().clone();
    assert_eq!(live.contracts[0].to_contract().unwrap().argument("price"), Some(&Value::Integer(7)));

    // Past the deadline the decision is refused and the entry is gone.
    w.net.advance(Duration::from_secs(61), &mut w.cluster);
    let expired = w.admin(Method::Post, &format!("/sessions/{soon}/decision"), json!({"action": "accept"}));
    assert_eq!((expired.status, expired.body["error"].as_str()), (410, Some("SessionExpired")));
    assert!(!w.cluster.agent("b").pending().contains_key(&soon));
    assert_eq!(w.state("b", soon), SessionState::Expired);
}

#[test]
fn pending_entries_expire_with_an_event() {
    let mut w = world(vec![]);
    let item = w.item(5);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(10));
    w.settle();
    assert!(w.cluster.agent("b").pending().contains_key(&id));
    w.net.advance(Duration::from_secs(11), &mut w.cluster);
    let now = w.net.now();
    assert_eq!(w.cluster.agent_mut("b").tick(now).unwrap(), vec![id]);
    assert!(w.cluster.agent("b").pending().is_empty());
    let kinds: Vec<_> = w.cluster.agent("b").events().iter().map(|e| e.kind.clone()).collect();
    assert!(kinds.contains(&EventKind::PendingExpired { session: id }));
    assert!(matches!(
        w.cluster.agent("b").log().records().last().unwrap().entry,
        conet_core::agent::Entry::Expired { session, .. } if session == id
    ));
}

#[test]
fn invalid_offers_are_refused_before_anything_is_sent() {
    let mut w = world(vec![]);
    let now = w.net.now();
    let bad = OfferItem::Contract(Contract::new(w.template.clone(), [("price".into(), Value::Integer(5))]));
    let b = w.party("b");
    let a = w.cluster.agent_mut("a");
    assert!(matches!(a.make_offer(OfferSpec::new(b.clone(), vec![bad]), now), Err(AgentError::InvalidContract(_))));
    let unheld = OfferItem::Contract(Contract::new(Hash::of_bytes(b"nope"), []));
    assert!(matches!(a.make_offer(OfferSpec::new(b, vec![unheld]), now), Err(AgentError::InvalidContract(_))));
    let stranger = PartyId::from_public_key(&[9; 32]);
    let item = w.item(1);
    let a = w.cluster.agent_mut("a");
    assert!(matches!(a.make_offer(OfferSpec::new(stranger, vec![item]), now), Err(AgentError::UnknownPeer(_))));
    assert!(a.log().is_empty());
}

#[test]
fn proposal_offers_are_sent_but_never_auto_accepted() {
    let mut w = world(vec![Policy::AutoAccept(Arc::new(|_, _| true))]);
    let proposal = OfferItem::Proposal(ProposalContract::new(
        w.template.clone(),
        [("price".into(), Constraint::Any), ("qty".into(), Constraint::Exact(Value::Integer(2)))],
    ));
    let id = w.offer("a", "b", vec![proposal], Duration::from_secs(60));
    w.settle();
    assert!(w.cluster.agent("b").pending().contains_key(&id));
    let rendered = w.admin(Method::Get, &format!("/sessions/{id}/render"), json!(null));
    assert_eq!(rendered.body["items"][0]["error"], "incomplete proposal");
    let resp = w.admin(
        Method::Post,
        &format!("/sessions/{id}/decision"),
        json!({"action": "counter", "assignments": {"price": {"integer": 40}}}),
    );
    assert_eq!(resp.status, 200, "{}", resp.body);
    w.settle();
    let live = w.cluster.agent("a").engine().session(id).unwrap().live_offer().clone();
    assert!(live.acceptable_contracts().is_some());
}

#[test]
fn unverified_envelopes_never_reach_the_engine() {
    let mut w = world(vec![cheap()]);
    let now = w.net.now();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let outsider = Identity::generate("mallory", &mut rng);
    let forged = outsider.sign("offer", b"{}".to_vec()).unwrap();
    let b = w.cluster.agent_mut("b");
    assert!(matches!(b.dispatch(&forged, None, now), Err(AgentError::BadSignature(_))));
    let a_id = w.ids["a"].clone();
    let odd = a_id.sign("greeting", b"hi".to_vec()).unwrap();
    let b = w.cluster.agent_mut("b");
    assert!(matches!(b.dispatch(&odd, None, now), Err(AgentError::UnknownPayloadKind(_))));

    let item = w.item(50);
    w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    let b = w.cluster.agent("b");
    assert_eq!(b.quarantine().entries().len(), 2);
    for record in b.log().records() {
        let env = record.entry.envelope().unwrap();
        assert!(!b.quarantine().contains(env.envelope_hash()));
    }
    assert!(b.log().records().iter().all(|r| r.entry.envelope().unwrap().envelope_hash() != forged.envelope_hash()));
}

#[test]
fn duplicate_delivery_is_ignored() {
    let mut w = world(vec![cheap()]);
    let item = w.item(10);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    let offer = w.cluster.agent("a").engine().session(id).unwrap().live_offer_envelope().clone();
    let now = w.net.now();
    let before = w.cluster.agent("b").log().len();
    let again = w.cluster.agent_mut("b").dispatch(&offer, None, now).unwrap();
    assert_eq!(again.outcome, conet_core::agent::Outcome::Duplicate);
    assert!(again.outgoing.is_empty());
    assert_eq!(w.cluster.agent("b").log().len(), before);
}

fn stc_world() -> (World, Hash) {
    let mut w = world(vec![cheap()]);
    let item = w.item(20);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    let original = w.cluster.agent("a").accepted_contracts()[0].1.clone();
    assert_eq!(w.state("b", id), SessionState::Accepted);
    (w, original)
}

#[test]
fn state_transitions_form_a_verifiable_chain() {
    let (w0, original) = stc_world();
    let template = w0.template.clone();
    drop(w0);
    // Rebuild with observer configuration on a and the STC policy on b.
    let (ids, registry) = identities();
    let mut net = SimNetwork::new(T0, 1);
    let mut cluster = Cluster::new();
    let mut pa = parts("a", &ids, &registry);
    pa.stc_observe.insert(template.clone());
    let mut pb = parts("b", &ids, &registry);
    pb.policies = vec![(template.clone(), cheap()), (stc::stc_template_hash().clone(), accept_sound_transitions())];
    let mut pb_missing_template = parts("b", &ids, &registry);
    pb_missing_template.policies = vec![(Hash::of_bytes(b"absent"), cheap())];
    assert!(matches!(Agent::in_memory(pb_missing_template), Err(AgentError::UnknownTemplate(_))));
    cluster.add_agent(&mut net, Agent::in_memory(pa).unwrap());
    cluster.add_agent(&mut net, Agent::in_memory(pb).unwrap());
    let mut w = World {
        net,
        cluster,
        ids,
        template,
    };
    let item = w.item(20);
    w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    let accepted = w.cluster.agent("a").accepted_contracts()[0].1.clone();
    assert_eq!(accepted, original);

    let b = w.party("b");
    let mut heads = Vec::new();
    for step in 0..3u8 {
        let now = w.net.now();
        let evidence = Evidence::Bytes(format!("delivery note {step}").into_bytes());
        let (session, out) = w.cluster.agent_mut("a").record_state_transition(&original, evidence, &b, now).unwrap();
        w.net.send_all(&Endpoint::sim("a"), out).unwrap();
        w.settle();
        assert_eq!(w.state("b", session), SessionState::Accepted, "transition {step}");
        let head = w.cluster.agent("a").latest_stc(&original).unwrap();
        heads.push(head);
    }
    for name in ["a", "b"] {
        let chain = walk_chain(&heads[2], w.cluster.agent(name).documents()).unwrap();
        assert_eq!(chain.links, vec![heads[2].clone(), heads[1].clone(), heads[0].clone()]);
        assert_eq!(chain.original, original);
    }
    let first: Contract = conet_core::canonical::decode(w.cluster.agent("b").documents().get(&heads[0]).unwrap()).unwrap();
    assert_eq!(stc::stc_fields(&first).unwrap().1, None);
    let second: Contract = conet_core::canonical::decode(w.cluster.agent("b").documents().get(&heads[1]).unwrap()).unwrap();
    assert_eq!(stc::stc_fields(&second).unwrap().1, Some(heads[0].clone()));

    // Breaking any one link is detected.
    let full = w.cluster.agent("b").documents();
    for missing in &heads[..2] {
        let mut copy = DocumentStore::new();
        for h in full.hashes().filter(|h| *h != missing) {
            copy.insert(full.get(h).unwrap().to_vec());
        }
        assert_eq!(walk_chain(&heads[2], &copy), Err(ChainError::Missing(missing.clone())));
    }
    let mut forged = full.clone();
    let (ev, _) = forged.insert(b"x".to_vec());
    let wrong_base = forged.insert_document(&stc::build_stc(&Hash::of_bytes(b"other"), None, &ev, T0)).unwrap();
    let grafted = forged.insert_document(&stc::build_stc(&original, Some(&wrong_base), &ev, T0)).unwrap();
    assert!(matches!(walk_chain(&grafted, &forged), Err(ChainError::OriginalMismatch { .. })));

    // Preconditions.
    let now = w.net.now();
    let a = w.cluster.agent_mut("a");
    assert!(matches!(
        a.record_state_transition(&Hash::of_bytes(b"no"), Evidence::Bytes(vec![1]), &b, now),
        Err(AgentError::UnknownOriginal(_))
    ));
    let stranger = PartyId::from_public_key(&[3; 32]);
    assert!(matches!(
        a.record_state_transition(&original, Evidence::Bytes(vec![1]), &stranger, now),
        Err(AgentError::NoCounterpartyEndpoint(_))
    ));
    let a_party = w.party("a");
    let b_agent = w.cluster.agent_mut("b");
    assert!(matches!(
        b_agent.record_state_transition(&original, Evidence::Bytes(vec![1]), &a_party, now),
        Err(AgentError::NotObserver(_))
    ));
}

/// A fixed script over two agents, parameterized by b's log backend.
fn crash_script(b_log: MessageStore) -> (World, Result<(), AgentError>) {
    let (ids, registry) = identities();
    let template = widget().hash().unwrap();
    let mut net = SimNetwork::new(T0, 1);
    let mut cluster = Cluster::new();
    cluster.add_agent(&mut net, Agent::in_memory(parts("a", &ids, &registry)).unwrap());
    let mut pb = parts("b", &ids, &registry);
    pb.policies = vec![(template.clone(), cheap())];
    let b = Agent::start(pb, b_log, Quarantine::new(Box::new(MemoryBackend::new()))).unwrap();
    cluster.add_agent(&mut net, b);
    let mut w = World {
        net,
        cluster,
        ids,
        template,
    };
    let result = (|| {
        let steps: [(i64, u64); 4] = [(50, 60), (500, 60), (70, 1), (900, 60)];
        for (price, validity) in steps {
            let item = w.item(price);
            w.offer("a", "b", vec![item], Duration::from_secs(validity));
            w.settle();
            if w.cluster.agent("b").is_crashed() {
                return Err(AgentError::Crashed);
            }
        }
        w.net.advance(Duration::from_secs(2), &mut w.cluster);
        let now = w.net.now();
        w.cluster.agent_mut("b").tick(now)?;
        let pending: Vec<SessionId> = w.cluster.agent("b").pending().keys().copied().collect();
        for id in pending {
            let item = w.item(300);
            let out = w.cluster.agent_mut("b").counter(id, vec![item], None, now)?;
            w.net.send_all(&Endpoint::sim("b"), out).unwrap();
        }
        w.settle();
        Ok(())
    })();
    (w, result)
}

fn engine_view(agent: &Agent) -> Vec<(SessionId, SessionState, Vec<Hash>)> {
    agent.engine().sessions().map(|s| (s.id(), s.state(), s.log())).collect()
}

#[test]
fn recovery_at_every_fault_point_matches_the_crashed_state() {
    let clean = MemoryBackend::new();
    let (w, result) = crash_script(MessageStore::new(Box::new(clean.clone())));
    result.unwrap();
    let total = parse_log(&clean.bytes()).unwrap().len();
    assert!(total >= 8, "script produces {total} records");

    for budget in 0..total {
        for torn in [0, 17] {
            let bytes = MemoryBackend::new();
            let faulty = FaultyBackend::new(bytes.clone(), budget, torn);
            let (crashed, result) = crash_script(MessageStore::new(Box::new(faulty)));
            assert!(result.is_err() || crashed.cluster.agent("b").is_crashed(), "budget {budget} must crash");
            let b = crashed.cluster.agent("b");
            let records = parse_log(&bytes.bytes()).unwrap();
            assert_eq!(records.len(), budget);

            let (ids, registry) = identities();
            let mut pb = parts("b", &ids, &registry);
            pb.policies = vec![(w.template.clone(), cheap())];
            let recovered = Agent::start(
                pb,
                MessageStore::with_records(Box::new(MemoryBackend::new()), records),
                Quarantine::new(Box::new(MemoryBackend::new())),
            )
            .unwrap();
            assert_eq!(engine_view(&recovered), engine_view(b), "budget {budget} torn {torn}");
            let pending: Vec<_> = recovered.pending().keys().collect();
            let expected: Vec<_> = b
                .engine()
                .sessions()
                .filter(|s| !s.is_terminal() && s.to_move() == Some(b.party_id()))
                .map(|s| s.id())
                .collect();
            assert_eq!(pending, expected.iter().collect::<Vec<_>>());
        }
    }
    assert!(!w.cluster.agent("b").is_crashed());
}

#[test]
fn crashed_agents_refuse_further_work() {
    let faulty = FaultyBackend::new(MemoryBackend::new(), 0, 0);
    let (mut w, result) = crash_script(MessageStore::new(Box::new(faulty)));
    assert!(result.is_err());
    let now = w.net.now();
    assert!(matches!(w.cluster.agent_mut("b").tick(now), Err(AgentError::Crashed)));
}

#[test]
fn file_backed_agent_resumes_from_its_log() {
    let dir = tempfile::tempdir().unwrap();
    let (ids, registry) = identities();
    let template = widget().hash().unwrap();
    let open = |dir: &std::path::Path| {
        let mut pb = parts("b", &ids, &registry);
        pb.policies = vec![(template.clone(), Policy::DeferToHuman)];
        Agent::start(pb, MessageStore::open_file(dir).unwrap(), Quarantine::open_file(dir).unwrap()).unwrap()
    };
    let mut net = SimNetwork::new(T0, 1);
    let mut cluster = Cluster::new();
    cluster.add_agent(&mut net, Agent::in_memory(parts("a", &ids, &registry)).unwrap());
    cluster.add_agent(&mut net, open(dir.path()));
    let mut w = World {
        net,
        cluster,
        ids: ids.clone(),
        template: template.clone(),
    };
    let item = w.item(5);
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    let before = engine_view(w.cluster.agent("b"));
    let reopened = open(dir.path());
    assert_eq!(engine_view(&reopened), before);
    assert!(reopened.pending().contains_key(&id));
}

#[test]
fn trace_session_fetches_gated_documents_with_evidence() {
    use conet_core::trace::{DisclosurePolicy, GateRule};
    let mut w = world(vec![cheap()]);
    let now = w.net.now();
    let datum = b"sensor readings".to_vec();
    let t = Template::new(
        "Data Sale",
        vec![
            Element::parameter("datum", "reference"),
            Element::parameter("buyer", "party"),
            Element::provision("Sells ${datum} to ${buyer}."),
        ],
    );
    let th = t.hash().unwrap();
    let (a_party, b_party) = (w.party("a"), w.party("b"));
    let a = w.cluster.agent_mut("a");
    let (datum_hash, _) = a.documents_mut().insert(datum.clone());
    a.documents_mut().set_policy(
        datum_hash.clone(),
        DisclosurePolicy::Gated(GateRule {
            grantor: a_party,
            template: th.clone(),
            hint: "buy it".into(),
        }),
    );
    for name in ["a", "b"] {
        w.cluster.agent_mut(name).documents_mut().insert_document(&t).unwrap();
    }
    w.cluster.agent_mut("b").bind_policy(th.clone(), Policy::AutoAccept(Arc::new(|_, _| true))).unwrap();
    let item = OfferItem::Contract(Contract::new(
        th,
        [("datum".into(), Value::Reference(datum_hash.clone())), ("buyer".into(), Value::Party(b_party))],
    ));
    let id = w.offer("a", "b", vec![item], Duration::from_secs(60));
    w.settle();
    assert_eq!(w.state("b", id), SessionState::Accepted);
    let (trace, out) = w.cluster.agent_mut("b").trace_session(id, now).unwrap();
    w.net.send_all(&Endpoint::sim("b"), out).unwrap();
    w.settle();
    let b = w.cluster.agent("b");
    assert!(b.trace_done(trace));
    assert_eq!(b.documents().get(&datum_hash), Some(&datum[..]));
    assert!(b.events().iter().any(|e| matches!(e.kind, EventKind::TraceFinished { fetched: 1, denied: 0, .. })));
}

#[allow(dead_code)]
fn _envelope_is_send(e: SignedEnvelope) -> impl Send {
    e
}
