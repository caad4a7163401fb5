//! Standalone transcript verification.
//!
//! Shares no state with the engine: a transcript plus a trust registry is
//! enough to reconstruct every transition of the session.

use serde::Serialize;
use thiserror::Error;

use super::engine::{Message, SessionState};
use super::messages::SessionId;
use crate::identity::{PartyId, SignedEnvelope, TrustRegistry};
use crate::time::Timestamp;

/// File extension for exported transcripts.
pub const TRANSCRIPT_EXTENSION: &str = ".transcript.ndjson";

/// The first broken link, by zero-based envelope position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transcript entry {index}: {reason}")]
pub struct TranscriptError {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TranscriptSummary {
    pub session_id: SessionId,
    pub initiator: PartyId,
    pub responder: PartyId,
    pub offers: usize,
    /// State after each entry.
    pub states: Vec<SessionState>,
    pub final_state: SessionState,
}

/// Newline-delimited wire envelopes.
pub fn write_transcript(envelopes: &[SignedEnvelope]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in envelopes {
        out.extend_from_slice(&e.to_wire_bytes());
        out.push(b'\n');
    }
    out
}

/// Strict: every line must be a canonical wire envelope; only a single
/// trailing newline is tolerated.
pub fn parse_transcript(bytes: &[u8]) -> Result<Vec<SignedEnvelope>, TranscriptError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(index, line)| {
            SignedEnvelope::from_wire_bytes(line).map_err(|e| TranscriptError {
                index,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Checks signatures (identity windows evaluated at `at`), hash links,
/// index sequence, turn alternation and the single-terminal rule.
pub fn verify_transcript(
    envelopes: &[SignedEnvelope],
    registry: &TrustRegistry,
    at: Timestamp,
) -> Result<TranscriptSummary, TranscriptError> {
    let fail = |index: usize, reason: String| TranscriptError { index, reason };
    if envelopes.is_empty() {
        return Err(fail(0, "empty transcript".into()));
    }
    let mut states = Vec::with_capacity(envelopes.len());
    let mut last_offer: Option<(usize, super::Offer)> = None;
    let mut parties: Option<(SessionId, PartyId, PartyId)> = None;
    let mut terminal = None;

    for (index, env) in envelopes.iter().enumerate() {
        if let Some(prev) = terminal {
            return Err(fail(index, format!("entry follows terminal state {prev}")));
        }
        let signer = registry
            .verify(env, at)
            .map_err(|e| fail(index, e.to_string()))?;
        let message = Message::open(env).map_err(|e| fail(index, e.to_string()))?;
        if &signer != message.author() {
            return Err(fail(index, "signer is not the message author".into()));
        }
        if let Some((sid, _, _)) = &parties {
            if message.session_id() != *sid {
                return Err(fail(index, "session id changes mid-transcript".into()));
            }
        }
        match message {
            Message::Offer(offer) => {
                match &last_offer {
                    None => {
                        if offer.offer_index != 1 || offer.prev_offer_hash.is_some() {
                            return Err(fail(index, "transcript must open with offer 1".into()));
                        }
                        parties = Some((offer.session_id, offer.sender.clone(), offer.receiver.clone()));
                    }
                    Some((prev_index, prev)) => {
                        if offer.offer_index != prev.offer_index + 1 {
                            return Err(fail(index, "offer index does not advance by one".into()));
                        }
                        if offer.prev_offer_hash.as_ref() != Some(envelopes[*prev_index].envelope_hash()) {
                            return Err(fail(index, "prevOfferHash does not link to the previous offer".into()));
                        }
                        if offer.sender != prev.receiver || offer.receiver != prev.sender {
                            return Err(fail(index, "turns do not alternate".into()));
                        }
                    }
                }
                let (_, initiator, _) = parties.as_ref().expect("set by the first offer");
                states.push(if &offer.sender == initiator {
                    SessionState::OfferedByInitiator
                } else {
                    SessionState::OfferedByResponder
                });
                last_offer = Some((index, offer));
            }
            Message::Acceptance(_) | Message::Rejection(_) => {
                let accept = matches!(message, Message::Acceptance(_));
                let binding = match &message {
                    Message::Acceptance(a) => &a.0,
                    Message::Rejection(r) => &r.0,
                    Message::Offer(_) => unreachable!(),
                };
                let Some((prev_index, prev)) = &last_offer else {
                    return Err(fail(index, "answer before any offer".into()));
                };
                if &binding.offer_hash != envelopes[*prev_index].envelope_hash() {
                    return Err(fail(index, "answer does not cite the live offer".into()));
                }
                if binding.offer_index != prev.offer_index {
                    return Err(fail(index, "answer cites the wrong offer index".into()));
                }
                if binding.signer != prev.receiver {
                    return Err(fail(index, "answer is not from the party holding the turn".into()));
                }
                if accept && prev.is_proposal_offer() {
                    return Err(fail(index, "acceptance of an incomplete proposal".into()));
                }
                let state = if accept { SessionState::Accepted } else { SessionState::Rejected };
                states.push(state);
                terminal = Some(state);
            }
        }
    }
    let (session_id, initiator, responder) = parties.expect("first entry is an offer");
    Ok(TranscriptSummary {
        session_id,
        initiator,
        responder,
        offers: states.iter().filter(|s| !s.is_terminal()).count(),
        final_state: *states.last().expect("non-empty"),
        states,
    })
}
