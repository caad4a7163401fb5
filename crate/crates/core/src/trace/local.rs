use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{handle_trace_request, open_answer, DocumentStore, HashAnswer, Query, RequestId, TraceClient, TraceRequest};
use crate::identity::{Identity, TrustRegistry};
use crate::time::Timestamp;

/// A peer reachable in-process, answering from its own store.
pub struct LocalPeer {
    pub identity: Identity,
    pub store: DocumentStore,
}

/// In-process [`TraceClient`]: requests are signed by `requester`, answered
/// by the peer registered under the query's locator, and the signed answer
/// is verified before use. Every request and answer takes its real wire
/// form, so signing and hashing are exercised as on a network.
pub struct LocalPeers<'a> {
    pub requester: &'a Identity,
    pub registry: &'a TrustRegistry,
    pub peers: BTreeMap<String, LocalPeer>,
    pub now: Timestamp,
    rng: ChaCha20Rng,
    /// Locators in the order they were queried.
    pub log: Vec<String>,
}

impl<'a> LocalPeers<'a> {
    pub fn new(requester: &'a Identity, registry: &'a TrustRegistry, now: Timestamp) -> Self {
        Self {
            requester,
            registry,
            peers: BTreeMap::new(),
            now,
            rng: ChaCha20Rng::seed_from_u64(0),
            log: Vec::new(),
        }
    }

    pub fn add(&mut self, locator: impl Into<String>, peer: LocalPeer) {
        self.peers.insert(locator.into(), peer);
    }
}

impl TraceClient for LocalPeers<'_> {
    fn query(&mut self, query: &Query) -> Result<Vec<HashAnswer>, String> {
        self.log.push(query.locator.clone());
        let peer = self
            .peers
            .get(&query.locator)
            .ok_or_else(|| format!("no route to {}", query.locator))?;
        let request_id = RequestId::random(&mut self.rng);
        let request = TraceRequest {
            request_id,
            requester: self.requester.party_id().clone(),
            hashes: query.hashes.clone(),
            reply_to: None,
            evidence: query.evidence.clone(),
        };
        let envelope = self.requester.sign_document(&request).map_err(|e| e.to_string())?;
        let wire = envelope.to_wire_bytes();
        let received = crate::identity::SignedEnvelope::from_wire_bytes(&wire).map_err(|e| e.to_string())?;
        let answer = handle_trace_request(&received, &peer.store, self.registry, peer.identity.party_id(), self.now)
            .map_err(|e| e.to_string())?;
        let answer_env = peer.identity.sign_document(&answer).map_err(|e| e.to_string())?;
        let answer = open_answer(&answer_env, self.registry, request_id, self.now).map_err(|e| e.to_string())?;
        Ok(answer.answers)
    }
}
