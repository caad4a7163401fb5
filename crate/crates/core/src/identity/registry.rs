//! Local trust registry: party fingerprints to public keys and validity windows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::keys::{decode_key, IdentityError};
use super::{Identity, PartyId, SignedEnvelope};
use crate::canonical::{self, CanonicalError, Document};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("signer {0} is not in the trust registry")]
    UnknownSigner(PartyId),
    #[error("identity {party} is not valid at {at}")]
    ExpiredIdentity { party: PartyId, at: Timestamp },
    #[error("signature does not verify")]
    BadSignature,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("public key fingerprint does not match party id {0}")]
    FingerprintMismatch(PartyId),
    #[error("validity window is empty (validFrom after validUntil)")]
    EmptyWindow,
    #[error("registry is signed by {0}, who is not listed in it")]
    UnlistedSigner(PartyId),
    #[error("registry signature: {0}")]
    Signature(#[from] VerifyError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub public_key: VerifyingKey,
    pub display_name: String,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
}

impl RegistryEntry {
    /// Closed interval `[valid_from, valid_until]`.
    pub fn is_valid_at(&self, at: Timestamp) -> bool {
        self.valid_from <= at && at <= self.valid_until
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustRegistry {
    entries: BTreeMap<PartyId, RegistryEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EntryRecord {
    party: PartyId,
    public_key: String,
    display_name: String,
    valid_from: Timestamp,
    valid_until: Timestamp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryRecord {
    entries: Vec<EntryRecord>,
}

impl TrustRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        public_key: VerifyingKey,
        display_name: impl Into<String>,
        valid_from: Timestamp,
        valid_until: Timestamp,
    ) -> Result<PartyId, RegistryError> {
        if valid_from > valid_until {
            return Err(RegistryError::EmptyWindow);
        }
        let party = PartyId::from_public_key(public_key.as_bytes());
        self.entries.insert(
            party.clone(),
            RegistryEntry {
                public_key,
                display_name: display_name.into(),
                valid_from,
                valid_until,
            },
        );
        Ok(party)
    }

    pub fn register(
        &mut self,
        identity: &Identity,
        valid_from: Timestamp,
        valid_until: Timestamp,
    ) -> Result<PartyId, RegistryError> {
        self.insert(
            *identity.verifying_key(),
            identity.display_name(),
            valid_from,
            valid_until,
        )
    }

    pub fn get(&self, party: &PartyId) -> Option<&RegistryEntry> {
        self.entries.get(party)
    }

    pub fn parties(&self) -> impl Iterator<Item = (&PartyId, &RegistryEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn display_name(&self, party: &PartyId) -> Option<&str> {
        self.entries.get(party).map(|e| e.display_name.as_str())
    }

    /// Key for `party`, valid at `at`.
    pub fn lookup(&self, party: &PartyId, at: Timestamp) -> Result<&RegistryEntry, VerifyError> {
        let entry = self
            .entries
            .get(party)
            .ok_or_else(|| VerifyError::UnknownSigner(party.clone()))?;
        if !entry.is_valid_at(at) {
            return Err(VerifyError::ExpiredIdentity {
                party: party.clone(),
                at,
            });
        }
        Ok(entry)
    }

    /// Verifies an envelope's signature under the signer's registered key.
    pub fn verify(&self, envelope: &SignedEnvelope, at: Timestamp) -> Result<PartyId, VerifyError> {
        let entry = self.lookup(envelope.signer(), at)?;
        if envelope.verify_signature(&entry.public_key) {
            Ok(envelope.signer().clone())
        } else {
            Err(VerifyError::BadSignature)
        }
    }

    /// Loads `trust.json`, either a bare registry document or an envelope
    /// wrapping one. A signed registry must be signed by one of its own
    /// members, valid at `at`.
    pub fn load(path: &Path, at: Timestamp) -> Result<Self, RegistryError> {
        let bytes = fs::read(path)?;
        let value: Json = serde_json::from_slice(&bytes).map_err(CanonicalError::from)?;
        if canonical::kind_of(&value) == Some(SignedEnvelope::KIND) {
            let env = SignedEnvelope::from_value(value)?;
            let registry: TrustRegistry = env.open().map_err(|e| {
                CanonicalError::InvariantViolation(e.to_string())
            })?;
            if registry.get(env.signer()).is_none() {
                return Err(RegistryError::UnlistedSigner(env.signer().clone()));
            }
            registry.verify(&env, at)?;
            Ok(registry)
        } else {
            Ok(TrustRegistry::from_value(value)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let mut text = serde_json::to_vec_pretty(&self.canonical_value()?).map_err(CanonicalError::from)?;
        text.push(b'\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn save_signed(&self, path: &Path, signer: &Identity) -> Result<(), RegistryError> {
        let env = signer.sign_document(self)?;
        let mut text = serde_json::to_vec_pretty(&env.wire_value()).map_err(CanonicalError::from)?;
        text.push(b'\n');
        fs::write(path, text)?;
        Ok(())
    }
}

impl Document for TrustRegistry {
    const KIND: &'static str = "trust-registry";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        let record = RegistryRecord {
            entries: self
                .entries
                .iter()
                .map(|(party, e)| EntryRecord {
                    party: party.clone(),
                    public_key: B64.encode(e.public_key.as_bytes()),
                    display_name: e.display_name.clone(),
                    valid_from: e.valid_from,
                    valid_until: e.valid_until,
                })
                .collect(),
        };
        canonical::tagged(Self::KIND, &record)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let record: RegistryRecord = canonical::untagged(Self::KIND, value)?;
        let mut registry = TrustRegistry::new();
        let mut last: Option<PartyId> = None;
        for e in record.entries {
            if last.as_ref().is_some_and(|p| *p >= e.party) {
                return Err(CanonicalError::InvariantViolation(
                    "registry entries must be sorted by party and unique".into(),
                ));
            }
            let key_bytes = decode_key(&e.public_key)
                .map_err(|err| CanonicalError::InvariantViolation(err.to_string()))?;
            let key = VerifyingKey::from_bytes(&key_bytes)
                .map_err(|err| CanonicalError::InvariantViolation(err.to_string()))?;
            let party = registry
                .insert(key, e.display_name, e.valid_from, e.valid_until)
                .map_err(|err| CanonicalError::InvariantViolation(err.to_string()))?;
            if party != e.party {
                return Err(CanonicalError::InvariantViolation(format!(
                    "entry {} does not match its public key",
                    e.party
                )));
            }
            last = Some(party);
        }
        Ok(registry)
    }
}
