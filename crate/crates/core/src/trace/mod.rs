//! Hash-reference tracing.
//!
//! A received contract names other documents by hash. The tracer skips the
//! ones already stored, asks the contract's sender for the rest in one
//! batch, follows redirects to other sources, and records denials together
//! with their permission hints. The responding side answers each hash with
//! data, a redirect, or a denial according to its disclosure policies.

mod local;
pub mod oracle;
mod messages;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

pub use local::{LocalPeer, LocalPeers};
pub use messages::{Answer, DocumentPush, HashAnswer, RequestId, TraceAnswer, TraceRequest};
pub use store::{DisclosurePolicy, DocumentStore, GateRule, Redirect, StoreError, POLICIES_FILE};

use crate::contract::{extract_references, Contract};
use crate::hash::Hash;
use crate::identity::{PartyId, SignedEnvelope, TrustRegistry, VerifyError};
use crate::negotiation::Offer;
use crate::time::Timestamp;

/// Redirect hops followed per hash before giving up.
pub const DEFAULT_MAX_REDIRECTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error(transparent)]
    BadSignature(#[from] VerifyError),
    #[error("malformed trace message: {0}")]
    Malformed(String),
}

/// The per-hash decision of the responding side.
pub fn disclose(
    store: &DocumentStore,
    requester: &PartyId,
    hash: &Hash,
    evidence: &[SignedEnvelope],
    registry: &TrustRegistry,
    now: Timestamp,
) -> Answer {
    let held = store.get(hash);
    match (held, store.policy(hash)) {
        (Some(bytes), Some(policy)) => match policy {
            DisclosurePolicy::Public => Answer::Data(bytes.to_vec()),
            DisclosurePolicy::PartiesOnly { parties, template } => {
                if parties.contains(requester) {
                    Answer::Data(bytes.to_vec())
                } else {
                    Answer::Denied {
                        hint: match template {
                            Some(t) => format!("disclosed to contract parties only; negotiate a contract using template {t}"),
                            None => "disclosed to contract parties only".into(),
                        },
                        template: template.clone(),
                    }
                }
            }
            DisclosurePolicy::Gated(rule) => {
                if rule.admits(requester, hash, evidence, registry, now) {
                    Answer::Data(bytes.to_vec())
                } else {
                    Answer::Denied {
                        hint: rule.hint.clone(),
                        template: Some(rule.template.clone()),
                    }
                }
            }
        },
        _ => match store.redirect(hash) {
            Some(r) => Answer::Redirect {
                locator: r.locator.clone(),
                hint: r.hint.clone(),
            },
            None if held.is_some() => Answer::denied("not disclosed"),
            None => Answer::denied("unknown document"),
        },
    }
}

/// `handleTraceRequest`: verifies the request and answers every hash.
pub fn handle_trace_request(
    request: &SignedEnvelope,
    store: &DocumentStore,
    registry: &TrustRegistry,
    responder: &PartyId,
    now: Timestamp,
) -> Result<TraceAnswer, TraceError> {
    let signer = registry.verify(request, now)?;
    let req: TraceRequest = request.open().map_err(|e| TraceError::Malformed(e.to_string()))?;
    if req.requester != signer {
        return Err(TraceError::Malformed("request signer is not the named requester".into()));
    }
    Ok(TraceAnswer {
        request_id: req.request_id,
        responder: responder.clone(),
        answers: req
            .hashes
            .iter()
            .map(|h| HashAnswer {
                hash: h.clone(),
                result: disclose(store, &signer, h, &req.evidence, registry, now),
            })
            .collect(),
    })
}

/// `pushReferenced`: the public documents referenced by an offer, for
/// sending alongside it. Empty when push is disabled.
pub fn push_referenced(offer: &Offer, store: &DocumentStore, enabled: bool) -> DocumentPush {
    if !enabled {
        return DocumentPush { documents: vec![] };
    }
    let refs: BTreeSet<Hash> = offer
        .contracts
        .iter()
        .filter_map(|c| c.to_contract())
        .flat_map(|c| extract_references(&c))
        .collect();
    DocumentPush {
        documents: refs
            .iter()
            .filter(|h| matches!(store.policy(h), Some(DisclosurePolicy::Public)))
            .filter_map(|h| store.get(h).map(<[u8]>::to_vec))
            .collect(),
    }
}

/// Stores pushed documents; returns how many were new.
pub fn accept_push(push: &DocumentPush, store: &mut DocumentStore) -> usize {
    push.documents.iter().filter(|d| store.insert((*d).clone()).1).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "outcome")]
pub enum Resolution {
    Known,
    Fetched { from: String },
    Denied { from: String, hint: String, template: Option<Hash> },
    DepthExceeded { locator: String },
    RedirectCycle { locator: String },
    /// Data that did not hash to the requested value; discarded.
    Corrupt { from: String },
    Unanswered { from: String },
    Transport { from: String, error: String },
}

impl Resolution {
    pub fn is_resolved(&self) -> bool {
        matches!(self, Resolution::Known | Resolution::Fetched { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceReport {
    pub resolutions: BTreeMap<Hash, Resolution>,
    /// Trace requests issued.
    pub requests: usize,
}

impl TraceReport {
    pub fn with<'a>(&'a self, pred: impl Fn(&Resolution) -> bool + 'a) -> impl Iterator<Item = &'a Hash> + 'a {
        self.resolutions.iter().filter(move |(_, r)| pred(r)).map(|(h, _)| h)
    }

    pub fn fetched(&self) -> usize {
        self.with(|r| matches!(r, Resolution::Fetched { .. })).count()
    }

    pub fn known(&self) -> usize {
        self.with(|r| matches!(r, Resolution::Known)).count()
    }

    pub fn denied(&self) -> usize {
        self.with(|r| matches!(r, Resolution::Denied { .. })).count()
    }

    pub fn is_complete(&self) -> bool {
        self.resolutions.values().all(Resolution::is_resolved)
    }
}

#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub max_redirects: usize,
    pub evidence: Vec<SignedEnvelope>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            max_redirects: DEFAULT_MAX_REDIRECTS,
            evidence: Vec::new(),
        }
    }
}

/// One batched request the caller must perform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: u64,
    pub locator: String,
    pub hashes: Vec<Hash>,
    pub evidence: Vec<SignedEnvelope>,
}

struct InFlight {
    locator: String,
    depth: usize,
    hashes: Vec<Hash>,
}

/// Sans-IO tracing state machine: emits [`Query`]s, consumes answers.
pub struct TraceJob {
    options: TraceOptions,
    outbox: Vec<Query>,
    in_flight: BTreeMap<u64, InFlight>,
    visited: BTreeMap<Hash, BTreeSet<String>>,
    report: TraceReport,
    next_id: u64,
}

impl TraceJob {
    /// Resolves `hashes`, asking `source` first. Already-stored hashes
    /// never reach the network.
    pub fn new(hashes: impl IntoIterator<Item = Hash>, source: &str, store: &DocumentStore, options: TraceOptions) -> Self {
        let mut job = TraceJob {
            options,
            outbox: Vec::new(),
            in_flight: BTreeMap::new(),
            visited: BTreeMap::new(),
            report: TraceReport::default(),
            next_id: 0,
        };
        let mut missing = Vec::new();
        for h in hashes.into_iter().collect::<BTreeSet<_>>() {
            if store.contains(&h) {
                job.report.resolutions.insert(h, Resolution::Known);
            } else {
                missing.push(h);
            }
        }
        job.enqueue(source.to_string(), 0, missing);
        job
    }

    pub fn for_contract(contract: &Contract, source: &str, store: &DocumentStore, options: TraceOptions) -> Self {
        Self::new(extract_references(contract), source, store, options)
    }

    fn enqueue(&mut self, locator: String, depth: usize, hashes: Vec<Hash>) {
        if hashes.is_empty() {
            return;
        }
        for h in &hashes {
            self.visited.entry(h.clone()).or_default().insert(locator.clone());
        }
        let id = self.next_id;
        self.next_id += 1;
        self.outbox.push(Query {
            id,
            locator: locator.clone(),
            hashes: hashes.clone(),
            evidence: self.options.evidence.clone(),
        });
        self.in_flight.insert(id, InFlight { locator, depth, hashes });
    }

    /// Queries ready to send; each is returned once.
    pub fn take_queries(&mut self) -> Vec<Query> {
        self.report.requests += self.outbox.len();
        std::mem::take(&mut self.outbox)
    }

    /// Feeds the outcome of query `id`. Unknown ids are ignored.
    pub fn on_answer(&mut self, id: u64, result: Result<Vec<HashAnswer>, String>, store: &mut DocumentStore) {
        let Some(flight) = self.in_flight.remove(&id) else { return };
        let from = flight.locator.clone();
        let answers = match result {
            Ok(a) => a,
            Err(error) => {
                for h in flight.hashes {
                    self.report.resolutions.insert(h, Resolution::Transport { from: from.clone(), error: error.clone() });
                }
                return;
            }
        };
        let mut redirects: BTreeMap<String, Vec<Hash>> = BTreeMap::new();
        for h in flight.hashes {
            let Some(answer) = answers.iter().find(|a| a.hash == h) else {
                self.report.resolutions.insert(h, Resolution::Unanswered { from: from.clone() });
                continue;
            };
            let resolution = match &answer.result {
                Answer::Data(bytes) => match store.insert_verified(&h, bytes.clone()) {
                    Ok(_) => Resolution::Fetched { from: from.clone() },
                    Err(_) => Resolution::Corrupt { from: from.clone() },
                },
                Answer::Denied { hint, template } => Resolution::Denied {
                    from: from.clone(),
                    hint: hint.clone(),
                    template: template.clone(),
                },
                Answer::Redirect { locator, .. } => {
                    if flight.depth + 1 > self.options.max_redirects {
                        Resolution::DepthExceeded { locator: locator.clone() }
                    } else if self.visited.get(&h).is_some_and(|v| v.contains(locator)) {
                        Resolution::RedirectCycle { locator: locator.clone() }
                    } else {
                        redirects.entry(locator.clone()).or_default().push(h);
                        continue;
                    }
                }
            };
            self.report.resolutions.insert(h, resolution);
        }
        for (locator, hashes) in redirects {
            self.enqueue(locator, flight.depth + 1, hashes);
        }
    }

    pub fn is_done(&self) -> bool {
        self.outbox.is_empty() && self.in_flight.is_empty()
    }

    pub fn report(&self) -> &TraceReport {
        &self.report
    }

    pub fn into_report(self) -> TraceReport {
        self.report
    }
}

/// Performs queries synchronously.
pub trait TraceClient {
    fn query(&mut self, query: &Query) -> Result<Vec<HashAnswer>, String>;
}

/// Drives a [`TraceJob`] to completion through `client`.
pub fn run_trace(mut job: TraceJob, store: &mut DocumentStore, client: &mut dyn TraceClient) -> TraceReport {
    while !job.is_done() {
        for q in job.take_queries() {
            let result = client.query(&q);
            job.on_answer(q.id, result, store);
        }
    }
    job.into_report()
}

/// `traceContract`.
pub fn trace_contract(
    contract: &Contract,
    source: &str,
    store: &mut DocumentStore,
    client: &mut dyn TraceClient,
    options: TraceOptions,
) -> TraceReport {
    let job = TraceJob::for_contract(contract, source, store, options);
    run_trace(job, store, client)
}

/// Checks an answer envelope against the request it claims to answer.
pub fn open_answer(
    envelope: &SignedEnvelope,
    registry: &TrustRegistry,
    expected_request: RequestId,
    now: Timestamp,
) -> Result<TraceAnswer, TraceError> {
    let signer = registry.verify(envelope, now)?;
    let answer: TraceAnswer = envelope.open().map_err(|e| TraceError::Malformed(e.to_string()))?;
    if answer.responder != signer {
        return Err(TraceError::Malformed("answer signer is not the named responder".into()));
    }
    if answer.request_id != expected_request {
        return Err(TraceError::Malformed(format!(
            "answer is for request {}, not {expected_request}",
            answer.request_id
        )));
    }
    Ok(answer)
}
