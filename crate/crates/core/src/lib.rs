//! Peer-to-peer contract agents: Ricardian contracts with machine-readable
//! parameters, a two-party negotiation protocol whose every message is
//! signed, and hash-reference tracing between agents.

pub mod agent;
pub mod canonical;
pub mod contract;
pub mod hash;
pub mod identity;
pub mod ids;
pub mod negotiation;
pub mod net;
pub mod time;
pub mod trace;

pub use canonical::{CanonicalError, Document};
pub use contract::{Constraint, Contract, ProposalContract, Template, TypeRegistry, Value};
pub use hash::Hash;
pub use identity::{Identity, PartyId, SignedEnvelope, TrustRegistry};
pub use negotiation::{NegotiationEngine, NegotiationSession, Offer, SessionId, SessionState};
pub use time::{Clock, Timestamp, VirtualClock};
