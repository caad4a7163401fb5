use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hash::{Hash, HashParseError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartyIdParseError {
    #[error("party id must start with `party:`")]
    MissingPrefix,
    #[error(transparent)]
    Hash(#[from] HashParseError),
}

/// A party, identified by the fingerprint of its public key.
/// Text form: `party:<algorithm>:<hex>`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId {
    fingerprint: Hash,
}

impl PartyId {
    pub fn from_public_key(public_key: &[u8]) -> Self {
        Self {
            fingerprint: Hash::of_bytes(public_key),
        }
    }

    pub fn from_fingerprint(fingerprint: Hash) -> Self {
        Self { fingerprint }
    }

    pub fn fingerprint(&self) -> &Hash {
        &self.fingerprint
    }

    /// First eight hex digits, for logs.
    pub fn short(&self) -> String {
        self.fingerprint.hex_digest()[..8].to_string()
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "party:{}", self.fingerprint)
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PartyId({})", self.short())
    }
}

impl FromStr for PartyId {
    type Err = PartyIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("party:").ok_or(PartyIdParseError::MissingPrefix)?;
        Ok(Self {
            fingerprint: rest.parse()?,
        })
    }
}

impl Serialize for PartyId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartyId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
