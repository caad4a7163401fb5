//! Ed25519 identities and their on-disk key files.
//!
//! The public half lives in `<name>.id.json`, the private half in
//! `<name>.secret.json`. Only the latter ever contains private key bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::envelope::{signing_input, SignatureAlgorithm, SignedEnvelope};
use super::PartyId;
use crate::canonical::{self, CanonicalError, Document};

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("identity has no private key")]
    MissingPrivateKey,
    #[error("key material is malformed: {0}")]
    KeyFormat(String),
    #[error("key files disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A party's keypair plus display name.
#[derive(Clone)]
pub struct Identity {
    party_id: PartyId,
    verifying_key: VerifyingKey,
    signing_key: Option<SigningKey>,
    display_name: String,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("party_id", &self.party_id)
            .field("display_name", &self.display_name)
            .field("has_private_key", &self.signing_key.is_some())
            .finish()
    }
}

impl Identity {
    /// Fresh keypair. Deterministic for a seeded `rng`.
    pub fn generate<R: RngCore + CryptoRng>(display_name: impl Into<String>, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_secret_bytes(display_name, seed)
    }

    pub fn from_secret_bytes(display_name: impl Into<String>, secret: [u8; 32]) -> Self {
        let signing_key = SigningKey::from_bytes(&secret);
        let verifying_key = signing_key.verifying_key();
        Self {
            party_id: PartyId::from_public_key(verifying_key.as_bytes()),
            verifying_key,
            signing_key: Some(signing_key),
            display_name: display_name.into(),
        }
    }

    pub fn party_id(&self) -> &PartyId {
        &self.party_id
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.verifying_key.to_bytes()
    }

    pub fn verifying_key(&self) -> &VerifyingKey {
        &self.verifying_key
    }

    pub fn has_private_key(&self) -> bool {
        self.signing_key.is_some()
    }

    /// The same identity with the private key dropped.
    pub fn public_only(&self) -> Identity {
        Identity {
            signing_key: None,
            ..self.clone()
        }
    }

    /// Signs `payload` (canonical bytes of a document of kind `payload_kind`).
    pub fn sign(&self, payload_kind: &str, payload: Vec<u8>) -> Result<SignedEnvelope, IdentityError> {
        let key = self.signing_key.as_ref().ok_or(IdentityError::MissingPrivateKey)?;
        let signature = key.sign(&signing_input(payload_kind, &payload));
        Ok(SignedEnvelope::assemble(
            payload_kind.to_string(),
            payload,
            self.party_id.clone(),
            SignatureAlgorithm::Ed25519,
            signature.to_bytes().to_vec(),
        ))
    }

    /// Canonicalizes and signs a document.
    pub fn sign_document<D: Document>(&self, doc: &D) -> Result<SignedEnvelope, IdentityError> {
        self.sign(D::KIND, doc.canonical_bytes()?)
    }

    pub fn public_file(&self) -> PublicKeyFile {
        PublicKeyFile {
            display_name: self.display_name.clone(),
            party_id: self.party_id.clone(),
            algorithm: SignatureAlgorithm::Ed25519,
            public_key: B64.encode(self.verifying_key.as_bytes()),
        }
    }

    pub fn secret_file(&self) -> Result<SecretKeyFile, IdentityError> {
        let key = self.signing_key.as_ref().ok_or(IdentityError::MissingPrivateKey)?;
        Ok(SecretKeyFile {
            party_id: self.party_id.clone(),
            algorithm: SignatureAlgorithm::Ed25519,
            private_key: B64.encode(key.to_bytes()),
        })
    }

    pub fn from_files(public: &PublicKeyFile, secret: Option<&SecretKeyFile>) -> Result<Self, IdentityError> {
        let verifying_key = public.verifying_key()?;
        let party_id = PartyId::from_public_key(verifying_key.as_bytes());
        if party_id != public.party_id {
            return Err(IdentityError::Mismatch(
                "partyId is not the fingerprint of publicKey".into(),
            ));
        }
        let signing_key = match secret {
            Some(secret) => {
                let bytes = decode_key(&secret.private_key)?;
                let key = SigningKey::from_bytes(&bytes);
                if key.verifying_key() != verifying_key || secret.party_id != party_id {
                    return Err(IdentityError::Mismatch(
                        "secret key does not belong to this identity".into(),
                    ));
                }
                Some(key)
            }
            None => None,
        };
        Ok(Self {
            party_id,
            verifying_key,
            signing_key,
            display_name: public.display_name.clone(),
        })
    }

    /// Writes `<name>.id.json` and `<name>.secret.json` into `dir`.
    pub fn save(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf), IdentityError> {
        fs::create_dir_all(dir)?;
        let public_path = dir.join(format!("{name}.id.json"));
        let secret_path = dir.join(format!("{name}.secret.json"));
        fs::write(&public_path, pretty(&self.public_file())?)?;
        write_private(&secret_path, &pretty(&self.secret_file()?)?)?;
        Ok((public_path, secret_path))
    }

    /// Loads `<name>.id.json` and, if present, `<name>.secret.json` from `dir`.
    pub fn load(dir: &Path, name: &str) -> Result<Self, IdentityError> {
        let public: PublicKeyFile = canonical::parse(&fs::read(dir.join(format!("{name}.id.json")))?)?;
        let secret_path = dir.join(format!("{name}.secret.json"));
        let secret = match fs::read(&secret_path) {
            Ok(bytes) => Some(canonical::parse::<SecretKeyFile>(&bytes)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Self::from_files(&public, secret.as_ref())
    }
}

fn pretty<D: Document>(doc: &D) -> Result<Vec<u8>, IdentityError> {
    let mut text = serde_json::to_vec_pretty(&doc.canonical_value()?).map_err(CanonicalError::from)?;
    text.push(b'\n');
    Ok(text)
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::write(path, bytes)
}

pub(crate) fn decode_key(text: &str) -> Result<[u8; 32], IdentityError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| IdentityError::KeyFormat(e.to_string()))?;
    bytes
        .try_into()
        .map_err(|_| IdentityError::KeyFormat("expected 32 key bytes".into()))
}

/// Public half of an identity, safe to exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PublicKeyFile {
    pub display_name: String,
    pub party_id: PartyId,
    pub algorithm: SignatureAlgorithm,
    pub public_key: String,
}

impl PublicKeyFile {
    pub fn verifying_key(&self) -> Result<VerifyingKey, IdentityError> {
        let bytes = decode_key(&self.public_key)?;
        VerifyingKey::from_bytes(&bytes).map_err(|e| IdentityError::KeyFormat(e.to_string()))
    }
}

impl Document for PublicKeyFile {
    const KIND: &'static str = "identity";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(Self::KIND, self)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        canonical::untagged(Self::KIND, value)
    }
}

/// Private half of an identity. Never sent over the wire.
#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SecretKeyFile {
    pub party_id: PartyId,
    pub algorithm: SignatureAlgorithm,
    pub private_key: String,
}

impl Document for SecretKeyFile {
    const KIND: &'static str = "secret-key";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(Self::KIND, self)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        canonical::untagged(Self::KIND, value)
    }
}
