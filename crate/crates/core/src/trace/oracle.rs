//! Randomized disclosure check against a direct policy-table oracle.
//!
//! Each case builds a random store, a requester, and one evidence bundle
//! drawn from a menu of valid and subtly invalid (offer, acceptance) pairs.
//! The generator labels each bundle with what it actually proves, and the
//! oracle decides disclosure from the policy table and that label alone,
//! never looking at envelopes. The responder must return `data` exactly
//! when the oracle allows it. A second trace of the same contract must not
//! fetch anything fetched by the first.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    disclose, trace_contract, Answer, DisclosurePolicy, DocumentStore, GateRule, LocalPeer, LocalPeers, Redirect,
    Resolution, TraceOptions,
};
use crate::contract::{Contract, Value};
use crate::hash::Hash;
use crate::identity::{Identity, PartyId, SignedEnvelope, TrustRegistry};
use crate::negotiation::{Acceptance, Offer, OfferBinding, OfferItem, SessionId};
use crate::time::Timestamp;

const T0: i64 = 1_700_000_000_000;

/// What an evidence bundle proves, by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proof {
    Nothing,
    /// A qualifying pair for `doc` under `template`, between `grantor` and the requester.
    Grant { doc: usize, template: usize, grantor: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PolicySpec {
    None,
    Public,
    PartiesOnly(Vec<usize>),
    Gated { grantor: usize, template: usize },
}

#[derive(Debug, Clone, Default)]
pub struct DisclosureReport {
    pub cases: usize,
    pub decisions: usize,
    pub disclosed: usize,
    pub over_disclosures: usize,
    pub under_disclosures: usize,
    pub duplicate_fetches: usize,
    pub repeat_requests_for_fetched: usize,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl DisclosureReport {
    pub fn passed(&self) -> bool {
        self.over_disclosures == 0
            && self.under_disclosures == 0
            && self.duplicate_fetches == 0
            && self.repeat_requests_for_fetched == 0
    }
}

fn oracle(policy: &PolicySpec, requester: usize, doc: usize, proof: Proof) -> bool {
    match policy {
        PolicySpec::None => false,
        PolicySpec::Public => true,
        PolicySpec::PartiesOnly(list) => list.contains(&requester),
        PolicySpec::Gated { grantor, template } => {
            proof == Proof::Grant { doc, template: *template, grantor: *grantor }
        }
    }
}

struct World {
    parties: Vec<Identity>,
    registry: TrustRegistry,
    templates: Vec<Hash>,
}

impl World {
    fn new(rng: &mut ChaCha20Rng) -> Self {
        let parties: Vec<Identity> = (0..5).map(|i| Identity::generate(format!("p{i}"), rng)).collect();
        let mut registry = TrustRegistry::new();
        for p in &parties {
            registry
                .register(p, Timestamp::from_millis(T0 - 1_000), Timestamp::from_millis(T0 + 1_000_000))
                .expect("non-empty window");
        }
        let templates = (0..2).map(|i| Hash::of_bytes(format!("purchase template {i}").as_bytes())).collect();
        World { parties, registry, templates }
    }

    fn id(&self, i: usize) -> &PartyId {
        self.parties[i].party_id()
    }

    fn offer(&self, from: usize, to: usize, template: usize, named: usize, doc: &Hash, session: u128) -> SignedEnvelope {
        let contract = Contract::new(
            self.templates[template].clone(),
            [
                ("receiver".to_string(), Value::Party(self.id(named).clone())),
                ("file".to_string(), Value::Reference(doc.clone())),
            ],
        );
        self.parties[from]
            .sign_document(&Offer {
                session_id: SessionId(session),
                offer_index: 1,
                sender: self.id(from).clone(),
                receiver: self.id(to).clone(),
                contracts: vec![OfferItem::Contract(contract)],
                valid_until: Timestamp::from_millis(T0 + 60_000),
                prev_offer_hash: None,
            })
            .expect("key")
    }

    fn acceptance(&self, signer: usize, offer: &SignedEnvelope, session: u128) -> SignedEnvelope {
        self.parties[signer]
            .sign_document(&Acceptance(OfferBinding {
                session_id: SessionId(session),
                offer_index: 1,
                offer_hash: offer.envelope_hash().clone(),
                signer: self.id(signer).clone(),
            }))
            .expect("key")
    }

    /// One evidence bundle for `requester` about `doc`, and what it proves.
    fn evidence(
        &self,
        rng: &mut ChaCha20Rng,
        requester: usize,
        docs: &[Hash],
        doc: usize,
        policy: &PolicySpec,
    ) -> (Vec<SignedEnvelope>, Proof) {
        // Usually aim at the target's gate so near-miss bundles are tested
        // against the rule they almost satisfy.
        let (grantor, template) = match *policy {
            PolicySpec::Gated { grantor, template } if grantor != requester && rng.gen_bool(0.8) => (grantor, template),
            _ => (
                (requester + rng.gen_range(1..self.parties.len())) % self.parties.len(),
                rng.gen_range(0..self.templates.len()),
            ),
        };
        let outsider = (0..self.parties.len()).find(|&p| p != requester && p != grantor).expect("5 parties");
        let session = rng.gen::<u128>();
        let h = &docs[doc];
        let grant = Proof::Grant { doc, template, grantor };
        match rng.gen_range(0..9) {
            0 => (vec![], Proof::Nothing),
            1 => {
                let o = self.offer(grantor, requester, template, requester, h, session);
                let a = self.acceptance(requester, &o, session);
                (vec![o, a], grant)
            }
            2 => {
                // Requester offers, grantor accepts.
                let o = self.offer(requester, grantor, template, requester, h, session);
                let a = self.acceptance(grantor, &o, session);
                (vec![a, o], grant)
            }
            3 => {
                // The contract names someone else as receiver.
                let o = self.offer(grantor, requester, template, outsider, h, session);
                let a = self.acceptance(requester, &o, session);
                (vec![o, a], Proof::Nothing)
            }
            4 => {
                // Accepted by a third party instead of the requester.
                let o = self.offer(grantor, requester, template, requester, h, session);
                let a = self.acceptance(outsider, &o, session);
                (vec![o, a], Proof::Nothing)
            }
            5 => {
                // Offer alone.
                (vec![self.offer(grantor, requester, template, requester, h, session)], Proof::Nothing)
            }
            6 => {
                // Acceptance binds a different offer.
                let o = self.offer(grantor, requester, template, requester, h, session);
                let other = self.offer(grantor, requester, template, requester, h, session ^ 1);
                let a = self.acceptance(requester, &other, session ^ 1);
                (vec![o, a], Proof::Nothing)
            }
            7 => {
                // A valid pair for another document.
                let other_doc = (doc + 1) % docs.len();
                let o = self.offer(grantor, requester, template, requester, &docs[other_doc], session);
                let a = self.acceptance(requester, &o, session);
                if other_doc == doc {
                    (vec![o, a], grant)
                } else {
                    (vec![o, a], Proof::Grant { doc: other_doc, template, grantor })
                }
            }
            _ => {
                // Offer impersonating the grantor, signed by the outsider.
                let genuine = self.offer(grantor, requester, template, requester, h, session);
                let offer: Offer = genuine.open().expect("own offer");
                let forged = self.parties[outsider].sign_document(&offer).expect("key");
                let a = self.acceptance(requester, &forged, session);
                (vec![forged, a], Proof::Nothing)
            }
        }
    }
}

fn random_policy(rng: &mut ChaCha20Rng, parties: usize, templates: usize) -> PolicySpec {
    match rng.gen_range(0..4) {
        0 => PolicySpec::None,
        1 => PolicySpec::Public,
        2 => {
            let mut list: Vec<usize> = (0..parties).filter(|_| rng.gen_bool(0.4)).collect();
            list.shuffle(rng);
            PolicySpec::PartiesOnly(list)
        }
        _ => PolicySpec::Gated {
            grantor: rng.gen_range(0..parties),
            template: rng.gen_range(0..templates),
        },
    }
}

/// Runs `cases` random policy tables.
pub fn run_disclosure_fuzz(seed: u64, cases: usize) -> DisclosureReport {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let world = World::new(&mut rng);
    let now = Timestamp::from_millis(T0);
    let mut report = DisclosureReport::default();
    let holder = 0usize;

    for case in 0..cases {
        let n_docs = rng.gen_range(1..=4);
        let docs_bytes: Vec<Vec<u8>> = (0..n_docs).map(|i| format!("case {case} doc {i} {}", rng.gen::<u64>()).into_bytes()).collect();
        let docs: Vec<Hash> = docs_bytes.iter().map(|b| Hash::of_bytes(b)).collect();
        let mut store = DocumentStore::new();
        let mut table = Vec::new();
        for (i, bytes) in docs_bytes.iter().enumerate() {
            store.insert(bytes.clone());
            let spec = random_policy(&mut rng, world.parties.len(), world.templates.len());
            match &spec {
                PolicySpec::None => {}
                PolicySpec::Public => store.set_policy(docs[i].clone(), DisclosurePolicy::Public),
                PolicySpec::PartiesOnly(list) => store.set_policy(
                    docs[i].clone(),
                    DisclosurePolicy::PartiesOnly {
                        parties: list.iter().map(|&p| world.id(p).clone()).collect(),
                        template: None,
                    },
                ),
                PolicySpec::Gated { grantor, template } => store.set_policy(
                    docs[i].clone(),
                    DisclosurePolicy::Gated(GateRule {
                        grantor: world.id(*grantor).clone(),
                        template: world.templates[*template].clone(),
                        hint: "accept the purchase offer first".into(),
                    }),
                ),
            }
            table.push(spec);
        }
        // An unknown hash and a redirected one must never yield data.
        let unknown = Hash::of_bytes(format!("unknown {case}").as_bytes());
        let redirected = Hash::of_bytes(format!("elsewhere {case}").as_bytes());
        store.set_redirect(redirected.clone(), Redirect { locator: "sim://mirror".into(), hint: "try the mirror".into() });

        let requester = rng.gen_range(0..world.parties.len());
        let target = rng.gen_range(0..n_docs);
        let (evidence, proof) = world.evidence(&mut rng, requester, &docs, target, &table[target]);

        for (i, h) in docs.iter().enumerate() {
            let allowed = oracle(&table[i], requester, i, proof);
            let answer = disclose(&store, world.id(requester), h, &evidence, &world.registry, now);
            let gave = matches!(answer, Answer::Data(_));
            report.decisions += 1;
            if gave {
                report.disclosed += 1;
            }
            if gave && !allowed {
                report.over_disclosures += 1;
                if report.failures.len() < 10 {
                    report.failures.push(format!("case {case}: doc {i} policy {:?} requester {requester} proof {proof:?} disclosed", table[i]));
                }
            }
            if allowed && !gave {
                report.under_disclosures += 1;
                if report.failures.len() < 10 {
                    report.failures.push(format!("case {case}: doc {i} policy {:?} requester {requester} proof {proof:?} withheld: {answer:?}", table[i]));
                }
            }
        }
        for h in [&unknown, &redirected] {
            report.decisions += 1;
            if matches!(disclose(&store, world.id(requester), h, &evidence, &world.registry, now), Answer::Data(_)) {
                report.over_disclosures += 1;
            }
        }

        // End to end through signed requests: trace a contract that
        // references every document, then trace it again.
        if requester != holder {
            let contract = Contract::new(
                Hash::of_bytes(b"listing"),
                docs.iter().enumerate().map(|(i, h)| (format!("doc{i}"), Value::Reference(h.clone()))),
            );
            let mut own = DocumentStore::new();
            own.insert(b"listing".to_vec());
            let mut peers = LocalPeers::new(&world.parties[requester], &world.registry, now);
            peers.add("holder", LocalPeer { identity: world.parties[holder].clone(), store: store.clone() });
            let options = TraceOptions { evidence: evidence.clone(), ..TraceOptions::default() };
            let first = trace_contract(&contract, "holder", &mut own, &mut peers, options.clone());
            let fetched: BTreeSet<Hash> = first
                .resolutions
                .iter()
                .filter(|(_, r)| matches!(r, Resolution::Fetched { .. }))
                .map(|(h, _)| h.clone())
                .collect();
            for h in &fetched {
                let i = docs.iter().position(|d| d == h).expect("only referenced docs fetched");
                if !oracle(&table[i], requester, i, proof) {
                    report.over_disclosures += 1;
                }
            }
            let mut queried: BTreeMap<Hash, usize> = BTreeMap::new();
            struct Spy<'a, 'b> {
                inner: &'a mut LocalPeers<'b>,
                seen: &'a mut BTreeMap<Hash, usize>,
            }
            impl super::TraceClient for Spy<'_, '_> {
                fn query(&mut self, q: &super::Query) -> Result<Vec<super::HashAnswer>, String> {
                    for h in &q.hashes {
                        *self.seen.entry(h.clone()).or_default() += 1;
                    }
                    self.inner.query(q)
                }
            }
            let second = trace_contract(&contract, "holder", &mut own, &mut Spy { inner: &mut peers, seen: &mut queried }, options);
            report.duplicate_fetches += second.fetched();
            report.repeat_requests_for_fetched += fetched.iter().filter(|h| queried.contains_key(*h)).count();
            if fetched.len() == docs.len() && second.requests != 0 {
                report.repeat_requests_for_fetched += 1;
            }
        }
        report.cases += 1;
    }
    report.elapsed = start.elapsed();
    report
}
