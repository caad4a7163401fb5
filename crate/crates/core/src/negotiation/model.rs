//! Brute-force reference model of the negotiation state machine and the
//! randomized differential check that compares it with [`NegotiationEngine`].
//!
//! The model never touches envelopes or signatures. Each pool message is
//! reduced to plain metadata, and a message is legal exactly when appending
//! it to the applied chain yields a chain accepted by [`chain_is_legal`],
//! checked as a whole rather than incrementally. At each step the model
//! enumerates every legal successor in the pool and applies the delivered
//! message iff it is among them.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::engine::{NegotiationEngine, NegotiationError, SessionState};
use crate::canonical::Document;
use super::messages::{Acceptance, Offer, OfferBinding, OfferItem, Rejection, SessionId};
use super::transcript::verify_transcript;
use crate::contract::{Constraint, Contract, ProposalContract, Value};
use crate::hash::Hash;
use crate::identity::{Identity, SignedEnvelope, TrustRegistry};
use crate::time::Timestamp;

/// Messages per sequence, ticks and expiry calls included.
pub const MAX_SEQUENCE_LEN: usize = 6;

const T0: i64 = 1_700_000_000_000;
const SESSION: SessionId = SessionId(0x5e55_1011);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Party {
    A,
    B,
    /// Holds a registered key but is not a session participant.
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    None,
    To(usize),
    Foreign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Offer {
        index: u32,
        sender: Party,
        receiver: Party,
        prev: Link,
        valid_until: i64,
        proposal: bool,
    },
    Answer {
        accept: bool,
        signer: Party,
        cites: Link,
        index: u32,
    },
}

/// Pool entry: metadata used by the model plus the envelope fed to the engine.
#[derive(Debug, Clone)]
struct Item {
    kind: Kind,
    /// Signature invalid, or envelope signer differs from the named author.
    forged: bool,
    envelope: SignedEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Deliver(usize),
    Tick(i64),
    Expire,
}

/// A fixed set of pre-signed messages for one session between A and B.
pub struct Pool {
    items: Vec<Item>,
    registry: Arc<TrustRegistry>,
}

fn other(p: Party) -> Party {
    match p {
        Party::A => Party::B,
        Party::B => Party::A,
        Party::M => Party::M,
    }
}

impl Pool {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ids = [
            Identity::generate("A", &mut rng),
            Identity::generate("B", &mut rng),
            Identity::generate("M", &mut rng),
        ];
        let id_of = |p: Party| match p {
            Party::A => &ids[0],
            Party::B => &ids[1],
            Party::M => &ids[2],
        };
        let mut registry = TrustRegistry::new();
        for id in &ids {
            registry.register(
                id,
                Timestamp::from_millis(T0 - 86_400_000),
                Timestamp::from_millis(T0 + 86_400_000),
            )
            .expect("non-empty window");
        }
        let template = Hash::of_bytes(b"fuzz template");
        let foreign = Hash::of_bytes(b"not an offer in this session");
        let mut items: Vec<Item> = Vec::new();

        let make_offer = |items: &mut Vec<Item>, index: u32, sender: Party, prev: Link, valid_until: i64, proposal: bool, price: i64| -> usize {
            let prev_hash = match prev {
                Link::None => None,
                Link::To(i) => Some(items[i].envelope.envelope_hash().clone()),
                Link::Foreign => Some(foreign.clone()),
            };
            let item = if proposal {
                OfferItem::Proposal(ProposalContract::new(
                    template.clone(),
                    [("price".to_string(), Constraint::range(Value::Integer(price), Value::Integer(price + 10)))],
                ))
            } else {
                OfferItem::Contract(Contract::new(template.clone(), [("price".to_string(), Value::Integer(price))]))
            };
            let offer = Offer {
                session_id: SESSION,
                offer_index: index,
                sender: id_of(sender).party_id().clone(),
                receiver: id_of(other(sender)).party_id().clone(),
                contracts: vec![item],
                valid_until: Timestamp::from_millis(valid_until),
                prev_offer_hash: prev_hash,
            };
            let envelope = id_of(sender).sign_document(&offer).expect("private key present");
            items.push(Item {
                kind: Kind::Offer {
                    index,
                    sender,
                    receiver: other(sender),
                    prev,
                    valid_until,
                    proposal,
                },
                forged: false,
                envelope,
            });
            items.len() - 1
        };

        let deadlines = [T0 + 400, T0 + 1_000, T0 + 2_500];
        let pick = |rng: &mut ChaCha20Rng| *deadlines.choose(rng).expect("non-empty");

        // Offer tree: two variants per depth, each linked to one variant of the
        // previous depth, up to index 4.
        let mut price = 100;
        let mut level: Vec<usize> = Vec::new();
        for _ in 0..2 {
            price += 1;
            let d = pick(&mut rng);
            level.push(make_offer(&mut items, 1, Party::A, Link::None, d, false, price));
        }
        make_offer(&mut items, 1, Party::A, Link::None, T0 - 1, false, 99);
        for depth in 2..=4u32 {
            let sender = if depth % 2 == 0 { Party::B } else { Party::A };
            let mut next = Vec::new();
            for (n, &parent) in level.iter().enumerate() {
                price += 1;
                let d = pick(&mut rng);
                let proposal = depth == 2 && n == 1;
                next.push(make_offer(&mut items, depth, sender, Link::To(parent), d, proposal, price));
            }
            // Defective variants of the counter to the first parent.
            let d = pick(&mut rng);
            make_offer(&mut items, depth + 1, sender, Link::To(level[0]), d, false, price + 50);
            make_offer(&mut items, depth, sender, Link::Foreign, d, false, price + 60);
            make_offer(&mut items, depth, other(sender), Link::To(level[0]), d, false, price + 70);
            level = next;
        }

        // Answers to every well-formed offer, from both parties.
        let offers: Vec<usize> = (0..items.len())
            .filter(|&i| matches!(items[i].kind, Kind::Offer { prev, .. } if prev != Link::Foreign))
            .collect();
        for &o in &offers {
            let Kind::Offer { index, receiver, sender, .. } = items[o].kind else { unreachable!() };
            for (accept, signer) in [(true, receiver), (false, receiver), (true, sender)] {
                items.push(answer(&items, o, accept, signer, index, id_of(signer)));
            }
        }
        // A wrong index, an unknown offer, and two forgeries.
        let first = offers[0];
        let Kind::Offer { index, receiver, .. } = items[first].kind else { unreachable!() };
        items.push(answer(&items, first, true, receiver, index + 1, id_of(receiver)));
        let mut unknown = answer(&items, first, false, receiver, index, id_of(receiver));
        let binding = OfferBinding {
            session_id: SESSION,
            offer_index: index,
            offer_hash: foreign.clone(),
            signer: id_of(receiver).party_id().clone(),
        };
        unknown.envelope = id_of(receiver).sign_document(&Rejection(binding)).expect("key");
        unknown.kind = Kind::Answer { accept: false, signer: receiver, cites: Link::Foreign, index };
        items.push(unknown);
        let mut impostor = answer(&items, first, true, receiver, index, id_of(Party::M));
        impostor.forged = true;
        items.push(impostor);
        let genuine = answer(&items, first, true, receiver, index, id_of(receiver));
        let mut sig = genuine.envelope.signature().to_vec();
        sig[0] ^= 1;
        let broken = SignedEnvelope::assemble(
            genuine.envelope.payload_kind().to_string(),
            genuine.envelope.payload().to_vec(),
            genuine.envelope.signer().clone(),
            genuine.envelope.algorithm(),
            sig,
        );
        items.push(Item { forged: true, envelope: broken, ..genuine });

        Pool {
            items,
            registry: Arc::new(registry),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn registry(&self) -> &Arc<TrustRegistry> {
        &self.registry
    }
}

/// `signer_identity` signs; `signer` is the party named in the body.
fn answer(items: &[Item], offer: usize, accept: bool, signer: Party, index: u32, signer_identity: &Identity) -> Item {
    let Kind::Offer { sender, receiver, .. } = items[offer].kind else { unreachable!() };
    let named = if signer == receiver { receiver } else { sender };
    let binding = OfferBinding {
        session_id: SESSION,
        offer_index: index,
        offer_hash: items[offer].envelope.envelope_hash().clone(),
        signer: match &items[offer].envelope.open::<Offer>().expect("pool offer") {
            o if named == receiver => o.receiver.clone(),
            o => o.sender.clone(),
        },
    };
    let envelope = if accept {
        signer_identity.sign_document(&Acceptance(binding))
    } else {
        signer_identity.sign_document(&Rejection(binding))
    }
    .expect("private key present");
    Item {
        kind: Kind::Answer {
            accept,
            signer: named,
            cites: Link::To(offer),
            index,
        },
        forged: false,
        envelope,
    }
}

/// Chain validity over metadata, judged as a whole.
fn chain_is_legal(items: &[Item], chain: &[usize]) -> bool {
    let mut offers: Vec<usize> = Vec::new();
    for (pos, &m) in chain.iter().enumerate() {
        let item = &items[m];
        if item.forged {
            return false;
        }
        match item.kind {
            Kind::Offer { index, sender, receiver, prev, .. } => {
                let expected_prev = offers.last().map_or(Link::None, |&p| Link::To(p));
                if prev != expected_prev || index as usize != offers.len() + 1 {
                    return false;
                }
                if let Some(&p) = offers.last() {
                    let Kind::Offer { sender: ps, .. } = items[p].kind else { return false };
                    if sender == ps {
                        return false;
                    }
                }
                if sender == Party::M || receiver == Party::M {
                    return false;
                }
                offers.push(m);
            }
            Kind::Answer { accept, signer, cites, index } => {
                if pos != chain.len() - 1 {
                    return false;
                }
                let Some(&live) = offers.last() else { return false };
                let Kind::Offer { index: li, receiver, proposal, .. } = items[live].kind else {
                    return false;
                };
                if cites != Link::To(live) || index != li || signer != receiver || (accept && proposal) {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ModelState {
    chain: Vec<usize>,
    expired: bool,
    now: i64,
}

impl ModelState {
    fn live_deadline(&self, items: &[Item]) -> Option<i64> {
        self.chain.iter().rev().find_map(|&m| match items[m].kind {
            Kind::Offer { valid_until, .. } => Some(valid_until),
            Kind::Answer { .. } => None,
        })
    }

    fn is_terminal(&self, items: &[Item]) -> bool {
        self.expired || self.chain.last().is_some_and(|&m| matches!(items[m].kind, Kind::Answer { .. }))
    }

    /// Every pool message that may legally be applied next.
    fn legal_successors(&self, items: &[Item]) -> Vec<usize> {
        if self.is_terminal(items) {
            return Vec::new();
        }
        let deadline = self.live_deadline(items);
        (0..items.len())
            .filter(|&m| {
                let mut extended = self.chain.clone();
                extended.push(m);
                if !chain_is_legal(items, &extended) {
                    return false;
                }
                let live_ok = deadline.is_none_or(|d| self.now <= d);
                let own_ok = match items[m].kind {
                    Kind::Offer { valid_until, .. } => self.now <= valid_until,
                    Kind::Answer { .. } => true,
                };
                live_ok && own_ok
            })
            .collect()
    }

    fn state(&self, items: &[Item]) -> Option<SessionState> {
        if self.expired {
            return Some(SessionState::Expired);
        }
        let &last = self.chain.last()?;
        Some(match items[last].kind {
            Kind::Answer { accept: true, .. } => SessionState::Accepted,
            Kind::Answer { accept: false, .. } => SessionState::Rejected,
            Kind::Offer { sender: Party::A, .. } => SessionState::OfferedByInitiator,
            Kind::Offer { .. } => SessionState::OfferedByResponder,
        })
    }

    /// A well-signed, correctly-addressed answer that cites an applied but
    /// no-longer-live offer.
    fn is_stale_answer(&self, items: &[Item], m: usize) -> bool {
        if self.is_terminal(items) || items[m].forged {
            return false;
        }
        match items[m].kind {
            Kind::Answer { cites: Link::To(o), .. } => {
                self.chain.contains(&o) && self.chain.last() != Some(&o)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FuzzReport {
    pub sequences: usize,
    pub deliveries: usize,
    pub applied: usize,
    pub stale_answers: usize,
    pub terminal_states: BTreeMap<String, usize>,
    pub mismatches: Vec<String>,
    pub elapsed: Duration,
    pub pool_size: usize,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn next_event(rng: &mut ChaCha20Rng, items: &[Item], model: &ModelState) -> Event {
    match rng.gen_range(0..10) {
        0 => Event::Tick(rng.gen_range(0..=1_500)),
        1 => Event::Expire,
        // Steer half the deliveries onto legal successors so that long chains
        // are common; the model still judges every delivery independently.
        2..=6 => match model.legal_successors(items).choose(rng) {
            Some(&m) => Event::Deliver(m),
            None => Event::Deliver(rng.gen_range(0..items.len())),
        },
        _ => Event::Deliver(rng.gen_range(0..items.len())),
    }
}

/// Runs one sequence through both implementations; returns a description
/// of the first divergence.
fn check_sequence(
    pool: &Pool,
    rng: &mut ChaCha20Rng,
    events: &mut Vec<Event>,
    report: &mut FuzzReport,
) -> Result<(), String> {
    let items = &pool.items;
    let mut engine = NegotiationEngine::new(pool.registry.clone());
    let mut model = ModelState {
        chain: Vec::new(),
        expired: false,
        now: T0,
    };
    let len = rng.gen_range(1..=MAX_SEQUENCE_LEN);
    for step in 0..len {
        let event = next_event(rng, items, &model);
        events.push(event);
        let now = Timestamp::from_millis(model.now);
        match event {
            Event::Tick(ms) => model.now += ms,
            Event::Expire => {
                let expected = !model.chain.is_empty()
                    && !model.is_terminal(items)
                    && model.live_deadline(items).is_some_and(|d| model.now > d);
                let got = engine.expire(SESSION, now).is_ok();
                if expected != got {
                    return Err(format!("step {step}: expire model={expected} engine={got}"));
                }
                if expected {
                    model.expired = true;
                }
            }
            Event::Deliver(m) => {
                report.deliveries += 1;
                let expected = model.legal_successors(items).contains(&m);
                let stale = model.is_stale_answer(items, m);
                let result = engine.receive(&items[m].envelope, now);
                if expected != result.is_ok() {
                    return Err(format!("step {step}: deliver {m} model={expected} engine={result:?}"));
                }
                if stale != matches!(result, Err(NegotiationError::SupersededOffer(_))) {
                    return Err(format!("step {step}: deliver {m} stale={stale} engine={result:?}"));
                }
                if stale {
                    report.stale_answers += 1;
                }
                if expected {
                    report.applied += 1;
                    model.chain.push(m);
                }
            }
        }
    }
    let state = engine.session(SESSION).ok().map(|s| s.state());
    if state != model.state(items) {
        return Err(format!("final state model={:?} engine={state:?}", model.state(items)));
    }
    if let Ok(session) = engine.session(SESSION) {
        let expected: Vec<&Hash> = model.chain.iter().map(|&m| items[m].envelope.envelope_hash()).collect();
        let got: Vec<&Hash> = session.transcript().iter().map(|e| e.envelope_hash()).collect();
        if expected != got {
            return Err("applied chain differs".into());
        }
        let terminals = session
            .transcript()
            .iter()
            .filter(|e| e.payload_kind() != Offer::KIND)
            .count();
        if terminals > 1 {
            return Err("two terminal messages applied".into());
        }
        verify_transcript(session.transcript(), &pool.registry, Timestamp::from_millis(T0))
            .map_err(|e| format!("applied chain fails verification: {e}"))?;
        *report.terminal_states.entry(session.state().to_string()).or_default() += 1;
    }
    Ok(())
}

/// Differential check of `sequences` random sequences over one pool.
pub fn run_fuzz(seed: u64, sequences: usize) -> FuzzReport {
    let start = Instant::now();
    let pool = Pool::generate(seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut report = FuzzReport {
        pool_size: pool.len(),
        ..FuzzReport::default()
    };
    for n in 0..sequences {
        let mut events = Vec::new();
        if let Err(e) = check_sequence(&pool, &mut rng, &mut events, &mut report) {
            if report.mismatches.len() < 10 {
                report.mismatches.push(format!("sequence {n} {events:?}: {e}"));
            }
        }
        report.sequences += 1;
    }
    report.elapsed = start.elapsed();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_messages_are_well_formed() {
        let pool = Pool::generate(1);
        assert!(pool.len() > 30);
        for item in &pool.items {
            assert!(super::super::Message::open(&item.envelope).is_ok());
        }
    }

    #[test]
    fn the_model_admits_a_full_accepting_chain() {
        let pool = Pool::generate(2);
        let items = &pool.items;
        let model = ModelState { chain: vec![], expired: false, now: T0 };
        let opening = model.legal_successors(items);
        assert_eq!(opening, vec![0, 1], "two fresh opening offers; the stale one is excluded");
    }

    #[test]
    fn small_differential_run() {
        let report = run_fuzz(3, 2_000);
        assert!(report.passed(), "{:#?}", report.mismatches);
        assert!(report.applied > 1_000);
        assert!(report.stale_answers > 0);
        for state in ["accepted", "rejected", "expired"] {
            assert!(report.terminal_states.get(state).copied().unwrap_or(0) > 0, "{state} never reached");
        }
    }
}
