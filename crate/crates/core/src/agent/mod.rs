//! The contract agent: verifies, persists and routes every envelope, applies
//! bound policies to offers addressed to it, runs handlers on Accepted
//! contracts, resolves references, and records state transitions.
//!
//! The agent is sans-IO. Every entry point takes the current time and
//! returns the envelopes to send; transports deliver them. A message is in
//! the log before it reaches the engine, and an outgoing message is in the
//! log before it is returned for sending.

pub mod admin;
mod config;
mod policy;
pub mod stc;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

pub use config::{AdminConfig, AgentConfig, ConfigError, SessionDefaults, StcConfig, CONFIG_FILE, ENV_ADMIN_TOKEN, ENV_LISTEN};
pub use policy::{
    decide, AcceptedContract, ContractHandler, CounterFn, Decision, OfferPredicate, Policy, PolicyContext,
    PolicyRule, RuleAction,
};
pub use store::{Entry, LogBackend, LogError, MemoryBackend, MessageStore, Quarantine, Record};

use crate::canonical::{self, CanonicalError, Document};
use crate::contract::{extract_references, validate_contract, validate_proposal, Contract, Template, TypeRegistry};
use crate::hash::Hash;
use crate::identity::{Identity, IdentityError, PartyId, SignedEnvelope, TrustRegistry, VerifyError};
use crate::negotiation::{
    Acceptance, Applied, NegotiationEngine, NegotiationError, Offer, OfferBinding, OfferItem, Rejection, SessionId,
    SessionState,
};
use crate::net::Endpoint;
use crate::time::Timestamp;
use crate::trace::{
    accept_push, handle_trace_request, open_answer, push_referenced, Answer, DocumentPush, DocumentStore, RequestId,
    TraceAnswer, TraceJob, TraceOptions, TraceReport, TraceRequest,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("signature check failed: {0}")]
    BadSignature(VerifyError),
    #[error("no route for payload kind `{0}`")]
    UnknownPayloadKind(String),
    #[error("no endpoint known for party {0}")]
    UnknownPeer(PartyId),
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("policy bound to template {0}, which is not in the document store")]
    UnknownTemplate(Hash),
    #[error("no accepted contract {0}")]
    UnknownOriginal(Hash),
    #[error("no endpoint known for counterparty {0}")]
    NoCounterpartyEndpoint(PartyId),
    #[error("this agent is not the observer for template {0}")]
    NotObserver(Hash),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error("message store: {0}")]
    Store(#[from] LogError),
    #[error("agent stopped after a store failure; recover it from its log")]
    Crashed,
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("setup: {0}")]
    Setup(String),
}

/// Payload kinds [`Agent::dispatch`] routes.
pub const ROUTED_KINDS: [&str; 6] = [
    Offer::KIND,
    Acceptance::KIND,
    Rejection::KIND,
    TraceRequest::KIND,
    TraceAnswer::KIND,
    DocumentPush::KIND,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Endpoint,
    pub envelope: SignedEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TraceId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum EventKind {
    #[serde(rename_all = "camelCase")]
    Received { hash: Hash, payload_kind: String, from: Option<Endpoint> },
    #[serde(rename_all = "camelCase")]
    Sent { hash: Hash, payload_kind: String, to: Endpoint },
    Applied { session: SessionId, state: SessionState, hash: Hash },
    NotApplied { hash: Hash, error: String, reason: String },
    Quarantined { hash: Hash, reason: String },
    Decision { session: SessionId, decision: String },
    PolicyFailed { session: SessionId, reason: String },
    Pending { session: SessionId, deadline: Timestamp },
    PendingExpired { session: SessionId },
    Expired { session: SessionId },
    HandlerInvoked { session: SessionId, contract: Hash },
    #[serde(rename_all = "camelCase")]
    TraceStarted { trace: TraceId, hashes: usize },
    TraceFinished { trace: TraceId, fetched: usize, known: usize, denied: usize, unresolved: usize },
    #[serde(rename_all = "camelCase")]
    TraceAnswered { request: RequestId, requester: PartyId, data: usize, denied: usize, redirects: usize },
    DocumentsReceived { count: usize, new: usize },
    #[serde(rename_all = "camelCase")]
    StcOffered { session: SessionId, original: Hash, prev_stc: Option<Hash> },
}

/// A subscriber notification. Sequence numbers are dense from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Applied(Applied),
    NotApplied(String),
    TraceAnswered,
    TraceJoined(TraceId),
    DocumentsStored(usize),
    Duplicate,
    Ignored(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatched {
    pub outcome: Outcome,
    pub outgoing: Vec<Outgoing>,
}

/// A session parked for a human decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PendingEntry {
    pub session: SessionId,
    pub since: Timestamp,
    pub deadline: Timestamp,
}

/// What to offer through [`Agent::make_offer`].
#[derive(Debug, Clone)]
pub struct OfferSpec {
    pub receiver: PartyId,
    pub items: Vec<OfferItem>,
    /// Defaults to the configured offer validity.
    pub validity: Option<Duration>,
    /// Defaults to a fresh random identifier.
    pub session_id: Option<SessionId>,
}

impl OfferSpec {
    pub fn new(receiver: PartyId, items: Vec<OfferItem>) -> Self {
        Self {
            receiver,
            items,
            validity: None,
            session_id: None,
        }
    }
}

pub enum Evidence {
    /// Stored (and hashed) by the agent before the STC is offered.
    Bytes(Vec<u8>),
    Stored(Hash),
}

/// Everything an agent is built from besides its logs.
#[derive(Clone)]
pub struct AgentParts {
    pub identity: Identity,
    pub endpoint: Endpoint,
    pub registry: Arc<TrustRegistry>,
    pub peers: BTreeMap<PartyId, Endpoint>,
    pub documents: DocumentStore,
    pub types: TypeRegistry,
    pub session: SessionDefaults,
    /// Template hash to policy, in evaluation order.
    pub policies: Vec<(Hash, Policy)>,
    pub stc_observe: BTreeSet<Hash>,
    pub seed: u64,
}

impl AgentParts {
    pub fn new(identity: Identity, endpoint: Endpoint, registry: Arc<TrustRegistry>) -> Self {
        Self {
            identity,
            endpoint,
            registry,
            peers: BTreeMap::new(),
            documents: DocumentStore::new(),
            types: TypeRegistry::builtin(),
            session: SessionDefaults::default(),
            policies: Vec::new(),
            stc_observe: BTreeSet::new(),
            seed: 0,
        }
    }
}

struct TraceState {
    job: TraceJob,
}

pub struct Agent {
    identity: Identity,
    endpoint: Endpoint,
    peers: BTreeMap<PartyId, Endpoint>,
    registry: Arc<TrustRegistry>,
    engine: NegotiationEngine,
    documents: DocumentStore,
    types: TypeRegistry,
    session_defaults: SessionDefaults,
    bindings: BTreeMap<Hash, Vec<Policy>>,
    stc_observe: BTreeSet<Hash>,
    log: MessageStore,
    quarantine: Quarantine,
    pending: BTreeMap<SessionId, PendingEntry>,
    traces: BTreeMap<TraceId, TraceState>,
    finished_traces: BTreeMap<TraceId, TraceReport>,
    requests: BTreeMap<RequestId, (TraceId, u64)>,
    next_trace: u64,
    events: Vec<Event>,
    rng: ChaCha20Rng,
    crashed: bool,
}

impl Agent {
    /// Builds an agent over `log`, replaying every record already in it.
    pub fn start(parts: AgentParts, log: MessageStore, quarantine: Quarantine) -> Result<Self, AgentError> {
        let mut documents = parts.documents;
        documents.insert_document(stc::stc_template())?;
        let mut bindings: BTreeMap<Hash, Vec<Policy>> = BTreeMap::new();
        for (template, policy) in parts.policies {
            if !documents.contains(&template) {
                return Err(AgentError::UnknownTemplate(template));
            }
            bindings.entry(template).or_default().push(policy);
        }
        let reseed = parts.seed ^ (log.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut agent = Agent {
            engine: NegotiationEngine::new(parts.registry.clone()),
            identity: parts.identity,
            endpoint: parts.endpoint,
            peers: parts.peers,
            registry: parts.registry,
            documents,
            types: parts.types,
            session_defaults: parts.session,
            bindings,
            stc_observe: parts.stc_observe,
            log,
            quarantine,
            pending: BTreeMap::new(),
            traces: BTreeMap::new(),
            finished_traces: BTreeMap::new(),
            requests: BTreeMap::new(),
            next_trace: 0,
            events: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(reseed),
            crashed: false,
        };
        let records = agent.log.records().to_vec();
        for record in &records {
            agent.replay(record);
        }
        let me = agent.identity.party_id().clone();
        for s in agent.engine.sessions() {
            if !s.is_terminal() && s.to_move() == Some(&me) {
                let at = records
                    .iter()
                    .rev()
                    .find(|r| r.entry.envelope().is_some_and(|e| e.envelope_hash() == s.live_offer_hash()))
                    .map_or(Timestamp::from_millis(0), |r| r.entry.at());
                agent.pending.insert(
                    s.id(),
                    PendingEntry {
                        session: s.id(),
                        since: at,
                        deadline: s.deadline(),
                    },
                );
            }
        }
        Ok(agent)
    }

    /// An agent whose logs live only in memory.
    pub fn in_memory(parts: AgentParts) -> Result<Self, AgentError> {
        Self::start(
            parts,
            MessageStore::new(Box::new(MemoryBackend::new())),
            Quarantine::new(Box::new(MemoryBackend::new())),
        )
    }

    /// Opens the agent described by `<state_dir>/agent.toml`, with extra
    /// programmatic policies after the configured ones.
    pub fn open(
        state_dir: &Path,
        config: &AgentConfig,
        extra: Vec<(Hash, Policy)>,
        now: Timestamp,
    ) -> Result<Self, AgentError> {
        let identity = Identity::load(&AgentConfig::keys_dir(state_dir), &config.identity)?;
        let registry = TrustRegistry::load(&state_dir.join(&config.registry), now)
            .map_err(|e| AgentError::Setup(e.to_string()))?;
        let documents =
            DocumentStore::load(&state_dir.join(&config.documents)).map_err(|e| AgentError::Setup(e.to_string()))?;
        let mut parts = AgentParts::new(identity, config.listen.clone(), Arc::new(registry));
        parts.peers = config.peers.clone();
        parts.documents = documents;
        parts.session = config.session.clone();
        parts.policies = config
            .policies
            .iter()
            .map(|r| (r.template.clone(), r.to_policy()))
            .chain(extra)
            .collect();
        parts.stc_observe = config.stc.observe.iter().cloned().collect();
        parts.seed = config.seed;
        Self::start(parts, MessageStore::open_file(state_dir)?, Quarantine::open_file(state_dir)?)
    }

    pub fn party_id(&self) -> &PartyId {
        self.identity.party_id()
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn engine(&self) -> &NegotiationEngine {
        &self.engine
    }

    pub fn documents(&self) -> &DocumentStore {
        &self.documents
    }

    /// Local edits such as disclosure policies and authored documents.
    pub fn documents_mut(&mut self) -> &mut DocumentStore {
        &mut self.documents
    }

    pub fn registry(&self) -> &Arc<TrustRegistry> {
        &self.registry
    }

    pub fn log(&self) -> &MessageStore {
        &self.log
    }

    pub fn quarantine(&self) -> &Quarantine {
        &self.quarantine
    }

    pub fn pending(&self) -> &BTreeMap<SessionId, PendingEntry> {
        &self.pending
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn events_since(&self, seq: u64) -> &[Event] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn add_peer(&mut self, party: PartyId, endpoint: Endpoint) {
        self.peers.insert(party, endpoint);
    }

    pub fn peer(&self, party: &PartyId) -> Option<&Endpoint> {
        self.peers.get(party)
    }

    /// Binds `policy` to `template`, after any already bound.
    pub fn bind_policy(&mut self, template: Hash, policy: Policy) -> Result<(), AgentError> {
        if !self.documents.contains(&template) {
            return Err(AgentError::UnknownTemplate(template));
        }
        self.bindings.entry(template).or_default().push(policy);
        Ok(())
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn trace_report(&self, id: TraceId) -> Option<&TraceReport> {
        self.finished_traces
            .get(&id)
            .or_else(|| self.traces.get(&id).map(|t| t.job.report()))
    }

    pub fn trace_done(&self, id: TraceId) -> bool {
        self.finished_traces.contains_key(&id)
    }

    fn alive(&self) -> Result<(), AgentError> {
        if self.crashed {
            Err(AgentError::Crashed)
        } else {
            Ok(())
        }
    }

    fn persist(&mut self, entry: Entry) -> Result<(), AgentError> {
        match self.log.append(entry) {
            Ok(_) => Ok(()),
            Err(e) => {
                self.crashed = true;
                Err(e.into())
            }
        }
    }

    fn emit(&mut self, at: Timestamp, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, at, kind });
    }

    fn quarantine_envelope(&mut self, now: Timestamp, reason: String, envelope: &SignedEnvelope) -> Result<(), AgentError> {
        if let Err(e) = self.quarantine.append(now, reason.clone(), envelope) {
            self.crashed = true;
            return Err(e.into());
        }
        self.emit(
            now,
            EventKind::Quarantined {
                hash: envelope.envelope_hash().clone(),
                reason,
            },
        );
        Ok(())
    }

    /// Verify, persist, route, apply policy, persist any response, return it
    /// for sending.
    pub fn dispatch(
        &mut self,
        envelope: &SignedEnvelope,
        from: Option<&Endpoint>,
        now: Timestamp,
    ) -> Result<Dispatched, AgentError> {
        self.alive()?;
        if let Err(e) = self.registry.verify(envelope, now) {
            self.quarantine_envelope(now, e.to_string(), envelope)?;
            return Err(AgentError::BadSignature(e));
        }
        let kind = envelope.payload_kind().to_string();
        if !ROUTED_KINDS.contains(&kind.as_str()) {
            self.quarantine_envelope(now, format!("unknown payload kind `{kind}`"), envelope)?;
            return Err(AgentError::UnknownPayloadKind(kind));
        }
        let hash = envelope.envelope_hash().clone();
        if self.log.was_received(&hash) {
            return Ok(Dispatched {
                outcome: Outcome::Duplicate,
                outgoing: Vec::new(),
            });
        }
        self.persist(Entry::Received {
            at: now,
            from: from.cloned(),
            envelope: envelope.clone(),
        })?;
        self.emit(
            now,
            EventKind::Received {
                hash,
                payload_kind: kind.clone(),
                from: from.cloned(),
            },
        );
        let mut out = Vec::new();
        let outcome = match kind.as_str() {
            TraceRequest::KIND => self.on_trace_request(envelope, from, now, &mut out)?,
            TraceAnswer::KIND => self.on_trace_answer(envelope, now, &mut out)?,
            DocumentPush::KIND => self.on_push(envelope, now),
            _ => self.on_negotiation(envelope, now, &mut out)?,
        };
        Ok(Dispatched { outcome, outgoing: out })
    }

    fn on_negotiation(
        &mut self,
        envelope: &SignedEnvelope,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<Outcome, AgentError> {
        match self.engine.receive(envelope, now) {
            Err(e) => {
                self.emit(
                    now,
                    EventKind::NotApplied {
                        hash: envelope.envelope_hash().clone(),
                        error: e.code().to_string(),
                        reason: e.to_string(),
                    },
                );
                Ok(Outcome::NotApplied(e.code().to_string()))
            }
            Ok(applied) => {
                self.after_applied(&applied, now, out, true)?;
                Ok(Outcome::Applied(applied))
            }
        }
    }

    /// Post-commit work for an applied negotiation message.
    fn after_applied(
        &mut self,
        applied: &Applied,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
        run_policy: bool,
    ) -> Result<(), AgentError> {
        self.emit(
            now,
            EventKind::Applied {
                session: applied.session,
                state: applied.state,
                hash: applied.envelope_hash.clone(),
            },
        );
        match applied.state {
            SessionState::Accepted => {
                self.archive_accepted(applied.session)?;
                self.run_handlers(applied.session, now);
            }
            SessionState::OfferedByInitiator | SessionState::OfferedByResponder => {
                let to_me = self
                    .engine
                    .session(applied.session)?
                    .to_move()
                    .is_some_and(|p| p == self.identity.party_id());
                if to_me && run_policy {
                    self.on_offer_for_me(applied.session, now, out)?;
                }
            }
            SessionState::Rejected | SessionState::Expired => {}
        }
        Ok(())
    }

    fn offer_is_valid(&self, offer: &Offer) -> bool {
        self.validate_items(&offer.contracts).is_ok()
    }

    fn on_offer_for_me(&mut self, id: SessionId, now: Timestamp, out: &mut Vec<Outgoing>) -> Result<(), AgentError> {
        let session = self.engine.session(id)?;
        let offer = session.live_offer().clone();
        let deadline = session.deadline();
        if self.session_defaults.auto_trace {
            if let Some(source) = self.peers.get(&offer.sender).cloned() {
                let hashes: BTreeSet<Hash> = offer
                    .contracts
                    .iter()
                    .filter_map(OfferItem::to_contract)
                    .flat_map(|c| extract_references(&c))
                    .filter(|h| !self.documents.contains(h))
                    .collect();
                if !hashes.is_empty() {
                    let (_, queries) = self.start_trace(hashes.into_iter().collect(), &source, Vec::new(), now)?;
                    out.extend(queries);
                }
            }
        }
        let decision = {
            let ctx = PolicyContext {
                me: self.identity.party_id(),
                documents: &self.documents,
                now,
                valid: self.offer_is_valid(&offer),
            };
            let mut seen = BTreeSet::new();
            let rules = offer
                .contracts
                .iter()
                .map(OfferItem::template)
                .filter(|t| seen.insert(*t))
                .filter_map(|t| self.bindings.get(t))
                .flatten();
            decide(rules, &offer, &ctx)
        };
        self.emit(
            now,
            EventKind::Decision {
                session: id,
                decision: decision.name().into(),
            },
        );
        let result = match decision {
            Decision::Accept => self.answer_inner(id, true, now, out),
            Decision::Reject => self.answer_inner(id, false, now, out),
            Decision::Counter(items) => self.counter_inner(id, items, None, now, out),
            Decision::Defer => {
                self.park(id, now, deadline);
                return Ok(());
            }
        };
        match result {
            Ok(()) => Ok(()),
            Err(e @ (AgentError::Store(_) | AgentError::Crashed)) => Err(e),
            Err(e) => {
                self.emit(
                    now,
                    EventKind::PolicyFailed {
                        session: id,
                        reason: e.to_string(),
                    },
                );
                self.park(id, now, deadline);
                Ok(())
            }
        }
    }

    fn park(&mut self, id: SessionId, now: Timestamp, deadline: Timestamp) {
        self.pending.insert(
            id,
            PendingEntry {
                session: id,
                since: now,
                deadline,
            },
        );
        self.emit(now, EventKind::Pending { session: id, deadline });
    }

    /// Stores the accepted contracts and both signed envelopes so later
    /// references to them resolve locally.
    fn archive_accepted(&mut self, id: SessionId) -> Result<(), AgentError> {
        let session = self.engine.session(id)?;
        let contracts = session.live_offer().acceptable_contracts().unwrap_or_default();
        let offer_env = session.live_offer_envelope().clone();
        let terminal = session.terminal_message().cloned();
        for c in &contracts {
            self.documents.insert_document(c)?;
        }
        self.documents.insert_document(&offer_env)?;
        if let Some(t) = terminal {
            self.documents.insert_document(&t)?;
        }
        Ok(())
    }

    fn run_handlers(&mut self, id: SessionId, now: Timestamp) {
        let Ok(session) = self.engine.session(id) else { return };
        let contracts = session.live_offer().acceptable_contracts().unwrap_or_default();
        let Some(counterparty) = session.counterparty(self.identity.party_id()).cloned() else {
            return;
        };
        let offer_hash = session.live_offer_hash().clone();
        let acceptance_hash = session
            .terminal_message()
            .map(|e| e.envelope_hash().clone())
            .unwrap_or_else(|| offer_hash.clone());
        let mut invoked = Vec::new();
        for c in &contracts {
            let contract_hash = c.hash().expect("accepted contracts are canonical");
            for policy in self.bindings.get(&c.template).into_iter().flatten() {
                if let Policy::Handler(h) = policy {
                    h(&AcceptedContract {
                        session: id,
                        contract: c,
                        contract_hash: contract_hash.clone(),
                        offer_hash: &offer_hash,
                        acceptance_hash: &acceptance_hash,
                        counterparty: &counterparty,
                    });
                    invoked.push(contract_hash.clone());
                }
            }
        }
        for contract in invoked {
            self.emit(now, EventKind::HandlerInvoked { session: id, contract });
        }
    }

    /// Checks each item against a template held in the document store.
    pub fn validate_items(&self, items: &[OfferItem]) -> Result<(), AgentError> {
        if items.is_empty() {
            return Err(AgentError::InvalidContract("an offer carries at least one contract".into()));
        }
        for item in items {
            let t = item.template();
            let bytes = self
                .documents
                .get(t)
                .ok_or_else(|| AgentError::InvalidContract(format!("template {t} is not held")))?;
            let template: Template = canonical::decode(bytes)
                .map_err(|e| AgentError::InvalidContract(format!("template {t}: {e}")))?;
            let report = match item {
                OfferItem::Contract(c) => validate_contract(c, &template, &self.types),
                OfferItem::Proposal(p) => validate_proposal(p, &template, &self.types),
            }
            .map_err(|e| AgentError::InvalidContract(e.to_string()))?;
            if !report.is_valid() {
                return Err(AgentError::InvalidContract(format!("{:?}", report.findings)));
            }
        }
        Ok(())
    }

    fn peer_endpoint(&self, party: &PartyId) -> Result<Endpoint, AgentError> {
        self.peers
            .get(party)
            .cloned()
            .ok_or_else(|| AgentError::UnknownPeer(party.clone()))
    }

    /// Persists, applies and queues one of this agent's own negotiation
    /// messages. The engine is consulted first so nothing is persisted as
    /// sent unless it applies.
    fn send_negotiation(
        &mut self,
        envelope: SignedEnvelope,
        to_party: &PartyId,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<Applied, AgentError> {
        let to = self.peer_endpoint(to_party)?;
        self.engine.check(&envelope, now)?;
        self.send_raw(envelope.clone(), to, now, out)?;
        let applied = self.engine.receive(&envelope, now).expect("checked before persisting");
        self.after_applied(&applied, now, out, false)?;
        Ok(applied)
    }

    fn send_raw(
        &mut self,
        envelope: SignedEnvelope,
        to: Endpoint,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), AgentError> {
        self.persist(Entry::Sent {
            at: now,
            to: to.clone(),
            envelope: envelope.clone(),
        })?;
        self.emit(
            now,
            EventKind::Sent {
                hash: envelope.envelope_hash().clone(),
                payload_kind: envelope.payload_kind().to_string(),
                to: to.clone(),
            },
        );
        out.push(Outgoing { to, envelope });
        Ok(())
    }

    fn fresh_session_id(&mut self) -> SessionId {
        loop {
            let id = SessionId::random(&mut self.rng);
            if self.engine.session(id).is_err() {
                return id;
            }
        }
    }

    /// `makeOffer`: opens a session with `spec.receiver`.
    pub fn make_offer(&mut self, spec: OfferSpec, now: Timestamp) -> Result<(SessionId, Vec<Outgoing>), AgentError> {
        self.make_offer_with_push(spec, Vec::new(), now)
    }

    fn make_offer_with_push(
        &mut self,
        spec: OfferSpec,
        extra_push: Vec<Vec<u8>>,
        now: Timestamp,
    ) -> Result<(SessionId, Vec<Outgoing>), AgentError> {
        self.alive()?;
        let to = self.peer_endpoint(&spec.receiver)?;
        self.validate_items(&spec.items)?;
        let session_id = match spec.session_id {
            Some(id) => id,
            None => self.fresh_session_id(),
        };
        let validity = spec.validity.unwrap_or(self.session_defaults.offer_validity());
        let offer = Offer {
            session_id,
            offer_index: 1,
            sender: self.identity.party_id().clone(),
            receiver: spec.receiver.clone(),
            contracts: spec.items,
            valid_until: now.saturating_add(validity),
            prev_offer_hash: None,
        };
        let envelope = self.identity.sign_document(&offer)?;
        self.engine.check(&envelope, now)?;
        let mut out = Vec::new();
        self.push_for(&offer, extra_push, to, now, &mut out)?;
        self.send_negotiation(envelope, &spec.receiver, now, &mut out)?;
        Ok((session_id, out))
    }

    fn push_for(
        &mut self,
        offer: &Offer,
        extra: Vec<Vec<u8>>,
        to: Endpoint,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), AgentError> {
        let mut push = push_referenced(offer, &self.documents, self.session_defaults.push_referenced);
        for doc in extra {
            if !push.documents.contains(&doc) {
                push.documents.push(doc);
            }
        }
        if push.documents.is_empty() {
            return Ok(());
        }
        let envelope = self.identity.sign_document(&push)?;
        self.send_raw(envelope, to, now, out)
    }

    fn counter_inner(
        &mut self,
        id: SessionId,
        items: Vec<OfferItem>,
        validity: Option<Duration>,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), AgentError> {
        self.validate_items(&items)?;
        let session = self.engine.session(id)?;
        let live = session.live_offer();
        let offer = Offer {
            session_id: id,
            offer_index: live.offer_index + 1,
            sender: self.identity.party_id().clone(),
            receiver: live.sender.clone(),
            contracts: items,
            valid_until: now.saturating_add(validity.unwrap_or(self.session_defaults.offer_validity())),
            prev_offer_hash: Some(session.live_offer_hash().clone()),
        };
        let receiver = offer.receiver.clone();
        let envelope = self.identity.sign_document(&offer)?;
        self.engine.check(&envelope, now)?;
        let to = self.peer_endpoint(&receiver)?;
        self.push_for(&offer, Vec::new(), to, now, out)?;
        self.send_negotiation(envelope, &receiver, now, out)?;
        self.pending.remove(&id);
        Ok(())
    }

    fn answer_inner(&mut self, id: SessionId, accept: bool, now: Timestamp, out: &mut Vec<Outgoing>) -> Result<(), AgentError> {
        let session = self.engine.session(id)?;
        let live = session.live_offer();
        let binding = OfferBinding {
            session_id: id,
            offer_index: live.offer_index,
            offer_hash: session.live_offer_hash().clone(),
            signer: self.identity.party_id().clone(),
        };
        let receiver = live.sender.clone();
        let envelope = if accept {
            self.identity.sign_document(&Acceptance(binding))?
        } else {
            self.identity.sign_document(&Rejection(binding))?
        };
        self.send_negotiation(envelope, &receiver, now, out)?;
        self.pending.remove(&id);
        Ok(())
    }

    /// `counterOffer` on the live offer of `id`.
    pub fn counter(
        &mut self,
        id: SessionId,
        items: Vec<OfferItem>,
        validity: Option<Duration>,
        now: Timestamp,
    ) -> Result<Vec<Outgoing>, AgentError> {
        self.alive()?;
        let mut out = Vec::new();
        self.counter_inner(id, items, validity, now, &mut out)?;
        Ok(out)
    }

    pub fn accept(&mut self, id: SessionId, now: Timestamp) -> Result<Vec<Outgoing>, AgentError> {
        self.alive()?;
        let mut out = Vec::new();
        self.answer_inner(id, true, now, &mut out)?;
        Ok(out)
    }

    pub fn reject(&mut self, id: SessionId, now: Timestamp) -> Result<Vec<Outgoing>, AgentError> {
        self.alive()?;
        let mut out = Vec::new();
        self.answer_inner(id, false, now, &mut out)?;
        Ok(out)
    }

    /// Expires every session past its deadline. Each expiry is logged before
    /// it is applied and pending entries emit an event as they go.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<SessionId>, AgentError> {
        self.alive()?;
        let due: Vec<SessionId> = self
            .engine
            .sessions()
            .filter(|s| !s.is_terminal() && now > s.deadline())
            .map(|s| s.id())
            .collect();
        for id in &due {
            self.persist(Entry::Expired { at: now, session: *id })?;
            self.engine.expire(*id, now).expect("due sessions expire");
            self.emit(now, EventKind::Expired { session: *id });
            if self.pending.remove(id).is_some() {
                self.emit(now, EventKind::PendingExpired { session: *id });
            }
        }
        Ok(due)
    }

    /// Re-runs policies for sessions left awaiting this agent's move, such
    /// as after recovery from a crash between receiving an offer and
    /// answering it.
    pub fn resume(&mut self, now: Timestamp) -> Result<Vec<Outgoing>, AgentError> {
        self.alive()?;
        let mut out = Vec::new();
        let waiting: Vec<SessionId> = self.pending.keys().copied().collect();
        for id in waiting {
            self.pending.remove(&id);
            self.on_offer_for_me(id, now, &mut out)?;
        }
        Ok(out)
    }

    /// Starts resolving `hashes`, asking `source` first.
    pub fn start_trace(
        &mut self,
        hashes: Vec<Hash>,
        source: &Endpoint,
        evidence: Vec<SignedEnvelope>,
        now: Timestamp,
    ) -> Result<(TraceId, Vec<Outgoing>), AgentError> {
        self.alive()?;
        let id = TraceId(self.next_trace);
        self.next_trace += 1;
        let count = hashes.len();
        let job = TraceJob::new(
            hashes,
            &source.to_string(),
            &self.documents,
            TraceOptions {
                evidence,
                ..TraceOptions::default()
            },
        );
        self.traces.insert(id, TraceState { job });
        self.emit(now, EventKind::TraceStarted { trace: id, hashes: count });
        let mut out = Vec::new();
        self.pump_trace(id, now, &mut out)?;
        Ok((id, out))
    }

    /// Traces every reference of the contracts in an Accepted session from
    /// the counterparty, presenting the offer and acceptance as evidence.
    pub fn trace_session(&mut self, id: SessionId, now: Timestamp) -> Result<(TraceId, Vec<Outgoing>), AgentError> {
        let session = self.engine.session(id)?;
        let counterparty = session
            .counterparty(self.identity.party_id())
            .cloned()
            .ok_or_else(|| AgentError::Setup("not a party to this session".into()))?;
        let hashes: BTreeSet<Hash> = session
            .live_offer()
            .contracts
            .iter()
            .filter_map(OfferItem::to_contract)
            .flat_map(|c| extract_references(&c))
            .collect();
        let mut evidence = vec![session.live_offer_envelope().clone()];
        evidence.extend(session.terminal_message().cloned());
        let source = self.peer_endpoint(&counterparty)?;
        self.start_trace(hashes.into_iter().collect(), &source, evidence, now)
    }

    fn pump_trace(&mut self, id: TraceId, now: Timestamp, out: &mut Vec<Outgoing>) -> Result<(), AgentError> {
        loop {
            let Some(state) = self.traces.get_mut(&id) else { return Ok(()) };
            let queries = state.job.take_queries();
            if queries.is_empty() {
                break;
            }
            for q in queries {
                let to = match q.locator.parse::<Endpoint>() {
                    Ok(to) => to,
                    Err(e) => {
                        let state = self.traces.get_mut(&id).expect("trace exists");
                        state.job.on_answer(q.id, Err(e.to_string()), &mut self.documents);
                        continue;
                    }
                };
                let request_id = RequestId::random(&mut self.rng);
                let request = TraceRequest {
                    request_id,
                    requester: self.identity.party_id().clone(),
                    hashes: q.hashes,
                    reply_to: Some(self.endpoint.to_string()),
                    evidence: q.evidence,
                };
                let envelope = self.identity.sign_document(&request)?;
                self.send_raw(envelope, to, now, out)?;
                self.requests.insert(request_id, (id, q.id));
            }
        }
        let done = self.traces.get(&id).is_some_and(|s| s.job.is_done());
        if done {
            let report = self.traces.remove(&id).expect("trace exists").job.into_report();
            self.emit(
                now,
                EventKind::TraceFinished {
                    trace: id,
                    fetched: report.fetched(),
                    known: report.known(),
                    denied: report.denied(),
                    unresolved: report.resolutions.len() - report.fetched() - report.known() - report.denied(),
                },
            );
            self.finished_traces.insert(id, report);
        }
        Ok(())
    }

    fn on_trace_answer(
        &mut self,
        envelope: &SignedEnvelope,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<Outcome, AgentError> {
        let Ok(answer) = envelope.open::<TraceAnswer>() else {
            return Ok(Outcome::Ignored("malformed trace answer".into()));
        };
        let Some((trace, query)) = self.requests.remove(&answer.request_id) else {
            return Ok(Outcome::Ignored(format!("no open request {}", answer.request_id)));
        };
        let result = open_answer(envelope, &self.registry, answer.request_id, now)
            .map(|a| a.answers)
            .map_err(|e| e.to_string());
        if let Some(state) = self.traces.get_mut(&trace) {
            state.job.on_answer(query, result, &mut self.documents);
        }
        self.pump_trace(trace, now, out)?;
        Ok(Outcome::TraceJoined(trace))
    }

    fn on_trace_request(
        &mut self,
        envelope: &SignedEnvelope,
        from: Option<&Endpoint>,
        now: Timestamp,
        out: &mut Vec<Outgoing>,
    ) -> Result<Outcome, AgentError> {
        let answer = match handle_trace_request(envelope, &self.documents, &self.registry, self.identity.party_id(), now)
        {
            Ok(a) => a,
            Err(e) => return Ok(Outcome::Ignored(e.to_string())),
        };
        let request: TraceRequest = envelope.open().expect("handled requests open");
        let to = request
            .reply_to
            .as_deref()
            .and_then(|r| r.parse::<Endpoint>().ok())
            .or_else(|| self.peers.get(&request.requester).cloned())
            .or_else(|| from.cloned());
        let Some(to) = to else {
            return Ok(Outcome::Ignored("no route back to the requester".into()));
        };
        let count = |pred: fn(&Answer) -> bool| answer.answers.iter().filter(|a| pred(&a.result)).count();
        let kind = EventKind::TraceAnswered {
            request: request.request_id,
            requester: request.requester.clone(),
            data: count(|a| matches!(a, Answer::Data(_))),
            denied: count(|a| matches!(a, Answer::Denied { .. })),
            redirects: count(|a| matches!(a, Answer::Redirect { .. })),
        };
        let reply = self.identity.sign_document(&answer)?;
        self.send_raw(reply, to, now, out)?;
        self.emit(now, kind);
        Ok(Outcome::TraceAnswered)
    }

    fn on_push(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Outcome {
        let Ok(push) = envelope.open::<DocumentPush>() else {
            return Outcome::Ignored("malformed document push".into());
        };
        let new = accept_push(&push, &mut self.documents);
        self.emit(
            now,
            EventKind::DocumentsReceived {
                count: push.documents.len(),
                new,
            },
        );
        Outcome::DocumentsStored(new)
    }

    /// Accepted contracts with their hashes and sessions.
    pub fn accepted_contracts(&self) -> Vec<(SessionId, Hash, Contract, Option<Timestamp>)> {
        self.engine
            .sessions()
            .filter(|s| s.state() == SessionState::Accepted)
            .flat_map(|s| {
                s.live_offer()
                    .acceptable_contracts()
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |c| (s.id(), c.hash().expect("canonical"), c, s.closed_at()))
            })
            .collect()
    }

    /// Sends `documents` to `to` as a signed document push.
    pub fn push_documents(
        &mut self,
        to: &Endpoint,
        documents: Vec<Vec<u8>>,
        now: Timestamp,
    ) -> Result<Vec<Outgoing>, AgentError> {
        self.alive()?;
        let envelope = self.identity.sign_document(&DocumentPush { documents })?;
        let mut out = Vec::new();
        self.send_raw(envelope, to.clone(), now, &mut out)?;
        Ok(out)
    }

    /// The most recently Accepted STC for `original`, if any.
    pub fn latest_stc(&self, original: &Hash) -> Option<Hash> {
        self.accepted_contracts()
            .into_iter()
            .filter(|(_, _, c, _)| stc::stc_fields(c).is_some_and(|(o, _, _)| &o == original))
            .max_by_key(|(_, _, _, closed)| *closed)
            .map(|(_, h, _, _)| h)
    }

    /// `recordStateTransition`: offers the next STC for `original` to
    /// `counterparty`, pushing the evidence along with it.
    pub fn record_state_transition(
        &mut self,
        original: &Hash,
        evidence: Evidence,
        counterparty: &PartyId,
        now: Timestamp,
    ) -> Result<(SessionId, Vec<Outgoing>), AgentError> {
        self.alive()?;
        let accepted = self
            .accepted_contracts()
            .into_iter()
            .find(|(_, h, _, _)| h == original)
            .ok_or_else(|| AgentError::UnknownOriginal(original.clone()))?;
        let template = accepted.2.template.clone();
        if !self.stc_observe.contains(&template) {
            return Err(AgentError::NotObserver(template));
        }
        if !self.peers.contains_key(counterparty) {
            return Err(AgentError::NoCounterpartyEndpoint(counterparty.clone()));
        }
        let evidence_hash = match evidence {
            Evidence::Bytes(b) => self.documents.insert(b).0,
            Evidence::Stored(h) => h,
        };
        let prev = self.latest_stc(original);
        let contract = stc::build_stc(original, prev.as_ref(), &evidence_hash, now);
        let push: Vec<Vec<u8>> = self.documents.get(&evidence_hash).map(<[u8]>::to_vec).into_iter().collect();
        let spec = OfferSpec::new(counterparty.clone(), vec![OfferItem::Contract(contract)]);
        let (session, out) = self.make_offer_with_push(spec, push, now)?;
        self.emit(
            now,
            EventKind::StcOffered {
                session,
                original: original.clone(),
                prev_stc: prev,
            },
        );
        Ok((session, out))
    }

    /// Re-applies one logged record without policies, handlers or events.
    fn replay(&mut self, record: &Record) {
        match &record.entry {
            Entry::Expired { at, session } => {
                let _ = self.engine.expire(*session, *at);
            }
            Entry::Received { at, envelope, .. } | Entry::Sent { at, envelope, .. } => match envelope.payload_kind() {
                TraceAnswer::KIND => {
                    if let Ok(answer) = envelope.open::<TraceAnswer>() {
                        for a in answer.answers {
                            if let Answer::Data(bytes) = a.result {
                                let _ = self.documents.insert_verified(&a.hash, bytes);
                            }
                        }
                    }
                }
                DocumentPush::KIND => {
                    if let Ok(push) = envelope.open::<DocumentPush>() {
                        accept_push(&push, &mut self.documents);
                    }
                }
                TraceRequest::KIND => {}
                _ => {
                    if let Ok(applied) = self.engine.receive(envelope, *at) {
                        if applied.state == SessionState::Accepted {
                            let _ = self.archive_accepted(applied.session);
                        }
                    }
                }
            },
        }
    }
}

/// Accepts STC offers whose chain checks out against the local store.
pub fn accept_sound_transitions() -> Policy {
    Policy::AutoAccept(Arc::new(|offer, ctx| {
        offer.contracts.iter().all(|item| match item.to_contract() {
            Some(c) if stc::is_stc(&c) => stc::check_candidate(&c, ctx.documents).is_ok(),
            _ => true,
        })
    }))
}
