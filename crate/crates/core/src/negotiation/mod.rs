//! Two-party negotiation: offers, acceptances and rejections keyed by
//! session and offer index, a per-session state machine, and transcript
//! verification.
//!
//! ```text
//!             counter (responder)
//!   OfferedByInitiator <-----------> OfferedByResponder
//!          |   \                     /   |
//!   accept |    \ reject     reject /    | accept
//!          v     v                 v     v
//!      Accepted   Rejected   Rejected   Accepted
//!
//!   any non-terminal state --(clock > validUntil)--> Expired
//! ```

mod engine;
mod messages;
pub mod model;
mod transcript;

pub use engine::{
    Applied, Message, NegotiationEngine, NegotiationError, NegotiationSession, SessionState,
    StaleAnswer,
};
pub use messages::{Acceptance, Offer, OfferBinding, OfferItem, Rejection, SessionId};
pub use transcript::{
    parse_transcript, verify_transcript, write_transcript, TranscriptError, TranscriptSummary,
    TRANSCRIPT_EXTENSION,
};
