use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::Document;
use crate::contract::Contract;
use crate::hash::{Hash, HashAlgorithm};
use crate::identity::{PartyId, SignedEnvelope, TrustRegistry};
use crate::negotiation::{Acceptance, Offer};
use crate::time::Timestamp;

pub const POLICIES_FILE: &str = "policies.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bytes hash to {actual}, not {expected}")]
    HashMismatch { expected: Hash, actual: Hash },
    #[error("store file `{0}` is not named after a digest")]
    BadFileName(String),
    #[error("policies: {0}")]
    Policies(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Access granted by a signed (offer, acceptance) pair.
///
/// The offer and the acceptance are signed one each by `grantor` and the
/// requester, the acceptance binds the offer, and some contract in the offer
/// uses `template`, names the requester in a party argument, and references
/// the requested hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GateRule {
    pub grantor: PartyId,
    pub template: Hash,
    pub hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum DisclosurePolicy {
    Public,
    PartiesOnly {
        parties: Vec<PartyId>,
        /// Offered to outsiders as the contract to negotiate for access.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template: Option<Hash>,
    },
    Gated(GateRule),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Redirect {
    pub locator: String,
    pub hint: String,
}

impl GateRule {
    /// True if `evidence` contains a qualifying pair for `requested`.
    pub fn admits(
        &self,
        requester: &PartyId,
        requested: &Hash,
        evidence: &[SignedEnvelope],
        registry: &TrustRegistry,
        now: Timestamp,
    ) -> bool {
        let verified = |env: &SignedEnvelope| registry.verify(env, now).ok();
        evidence.iter().any(|offer_env| {
            let Some(offer_signer) = verified(offer_env) else { return false };
            let Ok(offer) = offer_env.open::<Offer>() else { return false };
            let answering = if offer_signer == self.grantor {
                requester
            } else if &offer_signer == requester {
                &self.grantor
            } else {
                return false;
            };
            if offer.sender != offer_signer || &offer.receiver != answering {
                return false;
            }
            let grants = offer.contracts.iter().filter_map(|c| c.to_contract()).any(|c| {
                c.template == self.template && names_party(&c, requester) && references(&c, requested)
            });
            grants
                && evidence.iter().any(|acc_env| {
                    verified(acc_env).as_ref() == Some(answering)
                        && acc_env.open::<Acceptance>().is_ok_and(|a| {
                            &a.signer == answering
                                && &a.offer_hash == offer_env.envelope_hash()
                                && a.session_id == offer.session_id
                        })
                })
        })
    }
}

fn names_party(contract: &Contract, party: &PartyId) -> bool {
    contract.arguments.iter().any(|a| a.value.as_party() == Some(party))
}

fn references(contract: &Contract, hash: &Hash) -> bool {
    contract.arguments.iter().any(|a| a.value.as_reference() == Some(hash))
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PolicyTable {
    #[serde(default)]
    policies: BTreeMap<Hash, DisclosurePolicy>,
    #[serde(default)]
    redirects: BTreeMap<Hash, Redirect>,
}

/// Content-addressed documents plus their disclosure policies.
///
/// Every key equals the hash of its bytes; [`DocumentStore::insert`] is the
/// only way in. Documents without a policy are never disclosed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentStore {
    documents: BTreeMap<Hash, Vec<u8>>,
    policies: BTreeMap<Hash, DisclosurePolicy>,
    redirects: BTreeMap<Hash, Redirect>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the content address and whether the bytes were new.
    pub fn insert(&mut self, bytes: Vec<u8>) -> (Hash, bool) {
        let hash = Hash::of_bytes(&bytes);
        let fresh = !self.documents.contains_key(&hash);
        if fresh {
            self.documents.insert(hash.clone(), bytes);
        }
        (hash, fresh)
    }

    /// Inserts bytes claimed to have address `expected`.
    pub fn insert_verified(&mut self, expected: &Hash, bytes: Vec<u8>) -> Result<bool, StoreError> {
        let actual = expected.algorithm().digest(&bytes);
        if &actual != expected {
            return Err(StoreError::HashMismatch {
                expected: expected.clone(),
                actual,
            });
        }
        Ok(self.insert(bytes).1)
    }

    /// Stores a document's canonical bytes.
    pub fn insert_document<D: Document>(&mut self, doc: &D) -> Result<Hash, crate::CanonicalError> {
        Ok(self.insert(doc.canonical_bytes()?).0)
    }

    pub fn get(&self, hash: &Hash) -> Option<&[u8]> {
        self.documents.get(hash).map(Vec::as_slice)
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.documents.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn hashes(&self) -> impl Iterator<Item = &Hash> {
        self.documents.keys()
    }

    pub fn set_policy(&mut self, hash: Hash, policy: DisclosurePolicy) {
        self.policies.insert(hash, policy);
    }

    pub fn policy(&self, hash: &Hash) -> Option<&DisclosurePolicy> {
        self.policies.get(hash)
    }

    pub fn set_redirect(&mut self, hash: Hash, redirect: Redirect) {
        self.redirects.insert(hash, redirect);
    }

    pub fn redirect(&self, hash: &Hash) -> Option<&Redirect> {
        self.redirects.get(hash)
    }

    /// Writes one file per document, named by hex digest, plus the policy table.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        for (hash, bytes) in &self.documents {
            let path = dir.join(hash.hex_digest());
            if !path.exists() {
                fs::write(&path, bytes)?;
            }
        }
        let table = PolicyTable {
            policies: self.policies.clone(),
            redirects: self.redirects.clone(),
        };
        fs::write(dir.join(POLICIES_FILE), serde_json::to_vec_pretty(&table)?)?;
        Ok(())
    }

    /// Loads a directory written by [`DocumentStore::save`], re-checking
    /// every content address.
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let mut store = DocumentStore::new();
        if !dir.exists() {
            return Ok(store);
        }
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == POLICIES_FILE {
                continue;
            }
            let digest = hex::decode(&name).map_err(|_| StoreError::BadFileName(name.clone()))?;
            let expected = Hash::new(HashAlgorithm::Sha256, digest)
                .map_err(|_| StoreError::BadFileName(name.clone()))?;
            store.insert_verified(&expected, fs::read(entry.path())?)?;
        }
        let policies = dir.join(POLICIES_FILE);
        if policies.exists() {
            let table: PolicyTable = serde_json::from_slice(&fs::read(policies)?)?;
            store.policies = table.policies;
            store.redirects = table.redirects;
        }
        Ok(store)
    }
}
