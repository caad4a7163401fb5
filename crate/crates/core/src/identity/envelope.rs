//! Signed envelopes: the unit of non-repudiation.
//!
//! The envelope body is the canonical JSON object
//!
//! ```text
//! {"kind":"envelope","payload":<base64>,"payloadKind":..,"signature":<base64>,
//!  "signatureAlgorithm":"ed25519","signer":"party:sha-256:.."}
//! ```
//!
//! and the envelope hash is the SHA-256 of exactly those bytes. The wire form
//! adds an `envelopeHash` field, which receivers recompute and compare.
//! The signature covers `payloadKind || 0x00 || payload`.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::PartyId;
use crate::canonical::{self, CanonicalError, Document};
use crate::hash::Hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignatureAlgorithm {
    #[serde(rename = "ed25519")]
    Ed25519,
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("stated envelope hash {stated} does not match recomputed {actual}")]
    HashMismatch { stated: Hash, actual: Hash },
    #[error("envelope carries payload kind `{found}`, expected `{expected}`")]
    UnexpectedKind { expected: String, found: String },
    #[error("field `{0}` is not valid base64")]
    Base64(&'static str),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

pub(crate) fn signing_input(payload_kind: &str, payload: &[u8]) -> Vec<u8> {
    let mut input = Vec::with_capacity(payload_kind.len() + 1 + payload.len());
    input.extend_from_slice(payload_kind.as_bytes());
    input.push(0);
    input.extend_from_slice(payload);
    input
}

#[derive(Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    payload_kind: String,
    payload: Vec<u8>,
    signer: PartyId,
    algorithm: SignatureAlgorithm,
    signature: Vec<u8>,
    envelope_hash: Hash,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EnvelopeBody {
    payload_kind: String,
    payload: String,
    signer: PartyId,
    signature_algorithm: SignatureAlgorithm,
    signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    envelope_hash: Option<Hash>,
}

impl SignedEnvelope {
    pub(crate) fn assemble(
        payload_kind: String,
        payload: Vec<u8>,
        signer: PartyId,
        algorithm: SignatureAlgorithm,
        signature: Vec<u8>,
    ) -> Self {
        let mut env = SignedEnvelope {
            payload_kind,
            payload,
            signer,
            algorithm,
            signature,
            envelope_hash: Hash::of_bytes(b""),
        };
        env.envelope_hash = env.compute_hash();
        env
    }

    fn body(&self, with_hash: bool) -> EnvelopeBody {
        EnvelopeBody {
            payload_kind: self.payload_kind.clone(),
            payload: B64.encode(&self.payload),
            signer: self.signer.clone(),
            signature_algorithm: self.algorithm,
            signature: B64.encode(&self.signature),
            envelope_hash: with_hash.then(|| self.envelope_hash.clone()),
        }
    }

    fn compute_hash(&self) -> Hash {
        let bytes = canonical::to_canonical_bytes(
            &canonical::tagged(Self::KIND, &self.body(false)).expect("envelope body is an object"),
        )
        .expect("envelope body has no floats");
        Hash::of_bytes(&bytes)
    }

    pub fn payload_kind(&self) -> &str {
        &self.payload_kind
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn signer(&self) -> &PartyId {
        &self.signer
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        self.algorithm
    }

    /// Hash over the envelope body (everything except the hash itself).
    pub fn envelope_hash(&self) -> &Hash {
        &self.envelope_hash
    }

    /// Checks the signature against a known public key. Registry lookups and
    /// validity windows are handled by [`super::TrustRegistry::verify`].
    pub fn verify_signature(&self, key: &VerifyingKey) -> bool {
        let Ok(sig) = Signature::from_slice(&self.signature) else {
            return false;
        };
        key.verify(&signing_input(&self.payload_kind, &self.payload), &sig)
            .is_ok()
    }

    /// Decodes the payload as a `D`, which must match the payload kind and be
    /// in canonical form.
    pub fn open<D: Document>(&self) -> Result<D, EnvelopeError> {
        if self.payload_kind != D::KIND {
            return Err(EnvelopeError::UnexpectedKind {
                expected: D::KIND.to_string(),
                found: self.payload_kind.clone(),
            });
        }
        Ok(canonical::decode(&self.payload)?)
    }

    /// Canonical wire bytes, including the `envelopeHash` field.
    pub fn to_wire_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(&self.wire_value()).expect("envelope has no floats")
    }

    pub fn wire_value(&self) -> Json {
        canonical::tagged(Self::KIND, &self.body(true)).expect("envelope body is an object")
    }

    /// Strict decode of wire bytes: canonical form, recomputed hash must match.
    pub fn from_wire_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let value: Json = serde_json::from_slice(bytes).map_err(CanonicalError::from)?;
        let env = Self::from_json(value)?;
        if env.to_wire_bytes() != bytes {
            return Err(CanonicalError::NonCanonical.into());
        }
        Ok(env)
    }

    /// Lenient decode (any key order or whitespace); still recomputes the hash.
    pub fn from_json(value: Json) -> Result<Self, EnvelopeError> {
        let body: EnvelopeBody = canonical::untagged(Self::KIND, value)?;
        let payload = B64.decode(&body.payload).map_err(|_| EnvelopeError::Base64("payload"))?;
        let signature = B64
            .decode(&body.signature)
            .map_err(|_| EnvelopeError::Base64("signature"))?;
        let env = SignedEnvelope::assemble(
            body.payload_kind,
            payload,
            body.signer,
            body.signature_algorithm,
            signature,
        );
        if let Some(stated) = body.envelope_hash {
            if stated != env.envelope_hash {
                return Err(EnvelopeError::HashMismatch {
                    stated,
                    actual: env.envelope_hash,
                });
            }
        }
        Ok(env)
    }
}

impl fmt::Debug for SignedEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignedEnvelope")
            .field("payload_kind", &self.payload_kind)
            .field("signer", &self.signer)
            .field("envelope_hash", &self.envelope_hash)
            .finish()
    }
}

/// The canonical value of an envelope is its body without `envelopeHash`, so
/// that [`Document::hash`] equals [`SignedEnvelope::envelope_hash`] and the
/// body bytes can live in a content-addressed store.
impl Document for SignedEnvelope {
    const KIND: &'static str = "envelope";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(Self::KIND, &self.body(false))
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        SignedEnvelope::from_json(value).map_err(|e| match e {
            EnvelopeError::Canonical(c) => c,
            other => CanonicalError::InvariantViolation(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn alice() -> Identity {
        Identity::generate("alice", &mut ChaCha20Rng::seed_from_u64(11))
    }

    #[test]
    fn sign_then_verify() {
        let id = alice();
        let env = id.sign("note", br#"{"kind":"note"}"#.to_vec()).unwrap();
        assert!(env.verify_signature(id.verifying_key()));
        assert_eq!(env.signer(), id.party_id());
        let again = id.sign("note", br#"{"kind":"note"}"#.to_vec()).unwrap();
        assert!(again.verify_signature(id.verifying_key()));
    }

    #[test]
    fn payload_tamper_breaks_signature() {
        let id = alice();
        let env = id.sign("note", br#"{"kind":"note","x":1}"#.to_vec()).unwrap();
        for i in 0..env.payload.len() {
            let mut forged = env.clone();
            forged.payload[i] ^= 0x01;
            assert!(!forged.verify_signature(id.verifying_key()), "byte {i}");
        }
        let mut other_kind = env.clone();
        other_kind.payload_kind = "notes".into();
        assert!(!other_kind.verify_signature(id.verifying_key()));
    }

    #[test]
    fn document_hash_is_envelope_hash() {
        let env = alice().sign("note", b"{}".to_vec()).unwrap();
        assert_eq!(&env.hash().unwrap(), env.envelope_hash());
        let body = env.canonical_bytes().unwrap();
        let back: SignedEnvelope = canonical::decode(&body).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn wire_round_trip_and_hash_check() {
        let env = alice().sign("note", b"{}".to_vec()).unwrap();
        let wire = env.to_wire_bytes();
        assert_eq!(SignedEnvelope::from_wire_bytes(&wire).unwrap(), env);

        let mut value = env.wire_value();
        value["envelopeHash"] = Json::String(Hash::of_bytes(b"other").to_string());
        assert!(matches!(
            SignedEnvelope::from_json(value),
            Err(EnvelopeError::HashMismatch { .. })
        ));
    }
}
