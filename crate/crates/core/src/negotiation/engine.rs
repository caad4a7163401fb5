use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::messages::{Acceptance, OfferBinding, Offer, Rejection, SessionId};
use crate::canonical::{CanonicalError, Document};
use crate::hash::Hash;
use crate::identity::{EnvelopeError, PartyId, SignedEnvelope, TrustRegistry, VerifyError};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SessionState {
    OfferedByInitiator,
    OfferedByResponder,
    Accepted,
    Rejected,
    Expired,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Accepted | SessionState::Rejected | SessionState::Expired)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::OfferedByInitiator => "offeredByInitiator",
            SessionState::OfferedByResponder => "offeredByResponder",
            SessionState::Accepted => "accepted",
            SessionState::Rejected => "rejected",
            SessionState::Expired => "expired",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegotiationError {
    #[error(transparent)]
    BadSignature(#[from] VerifyError),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("offer expired at {valid_until}, before it could be opened at {now}")]
    AlreadyExpired { valid_until: Timestamp, now: Timestamp },
    #[error("session {0} already exists")]
    DuplicateSession(SessionId),
    #[error("session {0} is unknown")]
    UnknownSession(SessionId),
    #[error("it is not {0}'s turn")]
    NotYourTurn(PartyId),
    #[error("expected offer index {expected}, found {found}")]
    IndexGap { expected: u32, found: u32 },
    #[error("prevOfferHash does not match the live offer")]
    BadChainLink,
    #[error("session is {0}; no further transitions")]
    SessionTerminal(SessionState),
    #[error("live offer expired at {valid_until}; now {now}")]
    SessionExpired { valid_until: Timestamp, now: Timestamp },
    #[error("offer {0} has been superseded by a counter-offer")]
    SupersededOffer(Hash),
    #[error("offer {0} is not part of this session")]
    UnknownOffer(Hash),
    #[error("live offer contains an incomplete proposal")]
    IncompleteProposal,
    #[error("live offer is valid until {valid_until}; now {now}")]
    NotYetExpired { valid_until: Timestamp, now: Timestamp },
}

impl NegotiationError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            NegotiationError::BadSignature(_) => "BadSignature",
            NegotiationError::Malformed(_) => "Malformed",
            NegotiationError::AlreadyExpired { .. } => "AlreadyExpired",
            NegotiationError::DuplicateSession(_) => "DuplicateSession",
            NegotiationError::UnknownSession(_) => "UnknownSession",
            NegotiationError::NotYourTurn(_) => "NotYourTurn",
            NegotiationError::IndexGap { .. } => "IndexGap",
            NegotiationError::BadChainLink => "BadChainLink",
            NegotiationError::SessionTerminal(_) => "SessionTerminal",
            NegotiationError::SessionExpired { .. } => "SessionExpired",
            NegotiationError::SupersededOffer(_) => "SupersededOffer",
            NegotiationError::UnknownOffer(_) => "UnknownOffer",
            NegotiationError::IncompleteProposal => "IncompleteProposal",
            NegotiationError::NotYetExpired { .. } => "NotYetExpired",
        }
    }
}

impl From<EnvelopeError> for NegotiationError {
    fn from(e: EnvelopeError) -> Self {
        NegotiationError::Malformed(e.to_string())
    }
}

impl From<CanonicalError> for NegotiationError {
    fn from(e: CanonicalError) -> Self {
        NegotiationError::Malformed(e.to_string())
    }
}

/// A negotiation message decoded from its envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Offer(Offer),
    Acceptance(Acceptance),
    Rejection(Rejection),
}

impl Message {
    pub fn open(envelope: &SignedEnvelope) -> Result<Self, NegotiationError> {
        match envelope.payload_kind() {
            Offer::KIND => Ok(Message::Offer(envelope.open()?)),
            Acceptance::KIND => Ok(Message::Acceptance(envelope.open()?)),
            Rejection::KIND => Ok(Message::Rejection(envelope.open()?)),
            other => Err(NegotiationError::Malformed(format!(
                "`{other}` is not a negotiation message"
            ))),
        }
    }

    pub fn session_id(&self) -> SessionId {
        match self {
            Message::Offer(o) => o.session_id,
            Message::Acceptance(a) => a.session_id,
            Message::Rejection(r) => r.session_id,
        }
    }

    /// The party the message claims to be from.
    pub fn author(&self) -> &PartyId {
        match self {
            Message::Offer(o) => &o.sender,
            Message::Acceptance(a) => &a.signer,
            Message::Rejection(r) => &r.signer,
        }
    }
}

/// A well-signed message that cited a superseded offer: logged, not applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaleAnswer {
    pub envelope: SignedEnvelope,
    pub offer_hash: Hash,
}

/// One two-party negotiation.
///
/// `transcript` holds exactly the applied messages: offers `1..=n` in
/// index order, then at most one acceptance or rejection of offer `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationSession {
    id: SessionId,
    initiator: PartyId,
    responder: PartyId,
    state: SessionState,
    live_offer: Offer,
    live_offer_hash: Hash,
    transcript: Vec<SignedEnvelope>,
    stale: Vec<StaleAnswer>,
    closed_at: Option<Timestamp>,
}

impl NegotiationSession {
    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn initiator(&self) -> &PartyId {
        &self.initiator
    }

    pub fn responder(&self) -> &PartyId {
        &self.responder
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn live_offer(&self) -> &Offer {
        &self.live_offer
    }

    pub fn live_offer_hash(&self) -> &Hash {
        &self.live_offer_hash
    }

    pub fn live_offer_envelope(&self) -> &SignedEnvelope {
        self.transcript
            .iter()
            .rev()
            .find(|e| e.envelope_hash() == &self.live_offer_hash)
            .expect("live offer is always in the transcript")
    }

    /// `None` once the session is terminal.
    pub fn to_move(&self) -> Option<&PartyId> {
        (!self.is_terminal()).then_some(&self.live_offer.receiver)
    }

    pub fn deadline(&self) -> Timestamp {
        self.live_offer.valid_until
    }

    /// The party other than `party`, if `party` takes part.
    pub fn counterparty(&self, party: &PartyId) -> Option<&PartyId> {
        if party == &self.initiator {
            Some(&self.responder)
        } else if party == &self.responder {
            Some(&self.initiator)
        } else {
            None
        }
    }

    /// `sessionTranscript`: applied envelopes in order.
    pub fn transcript(&self) -> &[SignedEnvelope] {
        &self.transcript
    }

    pub fn log(&self) -> Vec<Hash> {
        self.transcript.iter().map(|e| e.envelope_hash().clone()).collect()
    }

    pub fn stale_answers(&self) -> &[StaleAnswer] {
        &self.stale
    }

    /// The acceptance or rejection, if one was applied.
    pub fn terminal_message(&self) -> Option<&SignedEnvelope> {
        match self.state {
            SessionState::Accepted | SessionState::Rejected => self.transcript.last(),
            _ => None,
        }
    }

    /// Time of the transition into a terminal state.
    pub fn closed_at(&self) -> Option<Timestamp> {
        self.closed_at
    }

    /// The offer with the given envelope hash, if this session applied it.
    pub fn offer_by_hash(&self, hash: &Hash) -> Option<&SignedEnvelope> {
        self.transcript
            .iter()
            .find(|e| e.payload_kind() == Offer::KIND && e.envelope_hash() == hash)
    }

    fn state_for_sender(&self, sender: &PartyId) -> SessionState {
        if sender == &self.initiator {
            SessionState::OfferedByInitiator
        } else {
            SessionState::OfferedByResponder
        }
    }
}

/// Outcome of applying one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub session: SessionId,
    pub state: SessionState,
    pub envelope_hash: Hash,
}

/// All sessions known to one agent. Sans-IO: every call takes the
/// receiver's current time explicitly.
#[derive(Debug, Clone)]
pub struct NegotiationEngine {
    registry: Arc<TrustRegistry>,
    sessions: BTreeMap<SessionId, NegotiationSession>,
}

impl PartialEq for NegotiationEngine {
    fn eq(&self, other: &Self) -> bool {
        self.sessions == other.sessions
    }
}

impl NegotiationEngine {
    pub fn new(registry: Arc<TrustRegistry>) -> Self {
        Self {
            registry,
            sessions: BTreeMap::new(),
        }
    }

    pub fn registry(&self) -> &Arc<TrustRegistry> {
        &self.registry
    }

    pub fn set_registry(&mut self, registry: Arc<TrustRegistry>) {
        self.registry = registry;
    }

    pub fn session(&self, id: SessionId) -> Result<&NegotiationSession, NegotiationError> {
        self.sessions.get(&id).ok_or(NegotiationError::UnknownSession(id))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &NegotiationSession> {
        self.sessions.values()
    }

    pub fn transcript(&self, id: SessionId) -> Result<&[SignedEnvelope], NegotiationError> {
        Ok(self.session(id)?.transcript())
    }

    /// Verifies the envelope and checks that it names its real author.
    fn authenticate(&self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Message, NegotiationError> {
        let message = Message::open(envelope)?;
        let signer = self.registry.verify(envelope, now)?;
        if &signer != message.author() {
            return Err(NegotiationError::Malformed(format!(
                "envelope signed by {signer} but message names {}",
                message.author()
            )));
        }
        Ok(message)
    }

    /// Routes any negotiation envelope to the matching operation.
    pub fn receive(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        match self.authenticate(envelope, now)? {
            Message::Offer(o) if o.offer_index == 1 => self.apply_open(envelope, o, now),
            Message::Offer(o) => self.apply_counter(envelope, o, now),
            Message::Acceptance(a) => self.apply_answer(envelope, a.0, true, now),
            Message::Rejection(r) => self.apply_answer(envelope, r.0, false, now),
        }
    }

    /// The result [`NegotiationEngine::receive`] would have, with no state
    /// change.
    pub fn check(&self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        let message = self.authenticate(envelope, now)?;
        let mut probe = NegotiationEngine::new(self.registry.clone());
        if let Some(s) = self.sessions.get(&message.session_id()) {
            probe.sessions.insert(s.id, s.clone());
        }
        probe.receive(envelope, now)
    }

    /// `openSession`.
    pub fn open_session(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        match self.authenticate(envelope, now)? {
            Message::Offer(o) if o.offer_index == 1 => self.apply_open(envelope, o, now),
            Message::Offer(o) => Err(NegotiationError::IndexGap { expected: 1, found: o.offer_index }),
            _ => Err(NegotiationError::Malformed("expected an offer".into())),
        }
    }

    /// `counterOffer`.
    pub fn counter_offer(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        match self.authenticate(envelope, now)? {
            Message::Offer(o) => self.apply_counter(envelope, o, now),
            _ => Err(NegotiationError::Malformed("expected an offer".into())),
        }
    }

    /// `accept`.
    pub fn accept(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        match self.authenticate(envelope, now)? {
            Message::Acceptance(a) => self.apply_answer(envelope, a.0, true, now),
            _ => Err(NegotiationError::Malformed("expected an acceptance".into())),
        }
    }

    /// `reject`.
    pub fn reject(&mut self, envelope: &SignedEnvelope, now: Timestamp) -> Result<Applied, NegotiationError> {
        match self.authenticate(envelope, now)? {
            Message::Rejection(r) => self.apply_answer(envelope, r.0, false, now),
            _ => Err(NegotiationError::Malformed("expected a rejection".into())),
        }
    }

    /// `expire`: strictly after the live offer's `validUntil`.
    pub fn expire(&mut self, id: SessionId, now: Timestamp) -> Result<Applied, NegotiationError> {
        let session = self.sessions.get_mut(&id).ok_or(NegotiationError::UnknownSession(id))?;
        if session.is_terminal() {
            return Err(NegotiationError::SessionTerminal(session.state));
        }
        let valid_until = session.live_offer.valid_until;
        if now <= valid_until {
            return Err(NegotiationError::NotYetExpired { valid_until, now });
        }
        session.state = SessionState::Expired;
        session.closed_at = Some(now);
        Ok(Applied {
            session: id,
            state: session.state,
            envelope_hash: session.live_offer_hash.clone(),
        })
    }

    /// Expires every session whose deadline has passed.
    pub fn expire_due(&mut self, now: Timestamp) -> Vec<SessionId> {
        let due: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| !s.is_terminal() && now > s.deadline())
            .map(|s| s.id)
            .collect();
        for id in &due {
            self.expire(*id, now).expect("due sessions are expirable");
        }
        due
    }

    fn apply_open(&mut self, envelope: &SignedEnvelope, offer: Offer, now: Timestamp) -> Result<Applied, NegotiationError> {
        if self.sessions.contains_key(&offer.session_id) {
            return Err(NegotiationError::DuplicateSession(offer.session_id));
        }
        if now > offer.valid_until {
            return Err(NegotiationError::AlreadyExpired {
                valid_until: offer.valid_until,
                now,
            });
        }
        let id = offer.session_id;
        let session = NegotiationSession {
            id,
            initiator: offer.sender.clone(),
            responder: offer.receiver.clone(),
            state: SessionState::OfferedByInitiator,
            live_offer_hash: envelope.envelope_hash().clone(),
            live_offer: offer,
            transcript: vec![envelope.clone()],
            stale: Vec::new(),
            closed_at: None,
        };
        self.sessions.insert(id, session);
        Ok(Applied {
            session: id,
            state: SessionState::OfferedByInitiator,
            envelope_hash: envelope.envelope_hash().clone(),
        })
    }

    fn apply_counter(&mut self, envelope: &SignedEnvelope, offer: Offer, now: Timestamp) -> Result<Applied, NegotiationError> {
        let id = offer.session_id;
        let session = self.sessions.get_mut(&id).ok_or(NegotiationError::UnknownSession(id))?;
        if session.is_terminal() {
            return Err(NegotiationError::SessionTerminal(session.state));
        }
        let live = &session.live_offer;
        if offer.sender != live.receiver {
            return Err(NegotiationError::NotYourTurn(offer.sender));
        }
        if offer.receiver != live.sender {
            return Err(NegotiationError::Malformed("counter-offer must go to the other party".into()));
        }
        if offer.offer_index != live.offer_index + 1 {
            return Err(NegotiationError::IndexGap {
                expected: live.offer_index + 1,
                found: offer.offer_index,
            });
        }
        if offer.prev_offer_hash.as_ref() != Some(&session.live_offer_hash) {
            return Err(NegotiationError::BadChainLink);
        }
        if now > live.valid_until {
            return Err(NegotiationError::SessionExpired {
                valid_until: live.valid_until,
                now,
            });
        }
        if now > offer.valid_until {
            return Err(NegotiationError::AlreadyExpired {
                valid_until: offer.valid_until,
                now,
            });
        }
        session.state = session.state_for_sender(&offer.sender);
        session.live_offer = offer;
        session.live_offer_hash = envelope.envelope_hash().clone();
        session.transcript.push(envelope.clone());
        Ok(Applied {
            session: id,
            state: session.state,
            envelope_hash: envelope.envelope_hash().clone(),
        })
    }

    fn apply_answer(
        &mut self,
        envelope: &SignedEnvelope,
        binding: OfferBinding,
        accept: bool,
        now: Timestamp,
    ) -> Result<Applied, NegotiationError> {
        let id = binding.session_id;
        let session = self.sessions.get_mut(&id).ok_or(NegotiationError::UnknownSession(id))?;
        if session.is_terminal() {
            return Err(NegotiationError::SessionTerminal(session.state));
        }
        if binding.offer_hash != session.live_offer_hash {
            return match session.offer_by_hash(&binding.offer_hash) {
                Some(_) => {
                    if !session.stale.iter().any(|s| s.envelope == *envelope) {
                        session.stale.push(StaleAnswer {
                            envelope: envelope.clone(),
                            offer_hash: binding.offer_hash.clone(),
                        });
                    }
                    Err(NegotiationError::SupersededOffer(binding.offer_hash))
                }
                None => Err(NegotiationError::UnknownOffer(binding.offer_hash)),
            };
        }
        let live = &session.live_offer;
        if binding.offer_index != live.offer_index {
            return Err(NegotiationError::Malformed(format!(
                "offerIndex {} does not match the cited offer's index {}",
                binding.offer_index, live.offer_index
            )));
        }
        if binding.signer != live.receiver {
            return Err(NegotiationError::NotYourTurn(binding.signer));
        }
        if now > live.valid_until {
            return Err(NegotiationError::SessionExpired {
                valid_until: live.valid_until,
                now,
            });
        }
        if accept && live.is_proposal_offer() {
            return Err(NegotiationError::IncompleteProposal);
        }
        session.state = if accept { SessionState::Accepted } else { SessionState::Rejected };
        session.closed_at = Some(now);
        session.transcript.push(envelope.clone());
        Ok(Applied {
            session: id,
            state: session.state,
            envelope_hash: envelope.envelope_hash().clone(),
        })
    }
}
