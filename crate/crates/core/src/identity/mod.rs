//! Party identities, signatures and the trust registry.

mod envelope;
mod keys;
mod party;
mod registry;

pub use envelope::{EnvelopeError, SignatureAlgorithm, SignedEnvelope};
pub use keys::{Identity, IdentityError, PublicKeyFile, SecretKeyFile};
pub use party::{PartyId, PartyIdParseError};
pub use registry::{RegistryEntry, RegistryError, TrustRegistry, VerifyError};
