//! Content hashes with an explicit algorithm identifier.
//!
//! The text form is `<algorithm>:<lowercase-hex-digest>`, e.g.
//! `sha-256:e3b0c442...`. Parsing is strict: unknown algorithms, wrong digest
//! lengths and uppercase hex are all rejected, so that parsing then encoding
//! is the identity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HashParseError {
    #[error("hash text is missing the `<algorithm>:` prefix")]
    MissingAlgorithm,
    #[error("unregistered hash algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("digest must be lowercase hex")]
    BadHex,
    #[error("digest has {actual} bytes, algorithm requires {expected}")]
    BadLength { expected: usize, actual: usize },
}

/// Registered hash algorithms. The default registry holds only SHA-256.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HashAlgorithm {
    Sha256,
}

impl HashAlgorithm {
    pub const fn identifier(self) -> &'static str {
        match self {
            HashAlgorithm::Sha256 => "sha-256",
        }
    }

    pub const fn digest_len(self) -> usize {
        match self {
            HashAlgorithm::Sha256 => 32,
        }
    }

    pub fn from_identifier(id: &str) -> Option<Self> {
        match id {
            "sha-256" => Some(HashAlgorithm::Sha256),
            _ => None,
        }
    }

    pub fn digest(self, bytes: &[u8]) -> Hash {
        match self {
            HashAlgorithm::Sha256 => Hash {
                algorithm: self,
                digest: Sha256::digest(bytes).to_vec(),
            },
        }
    }
}

impl fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.identifier())
    }
}

/// A digest tagged with the algorithm that produced it.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash {
    algorithm: HashAlgorithm,
    digest: Vec<u8>,
}

impl Hash {
    pub fn new(algorithm: HashAlgorithm, digest: Vec<u8>) -> Result<Self, HashParseError> {
        if digest.len() != algorithm.digest_len() {
            return Err(HashParseError::BadLength {
                expected: algorithm.digest_len(),
                actual: digest.len(),
            });
        }
        Ok(Self { algorithm, digest })
    }

    /// SHA-256 over raw bytes.
    pub fn of_bytes(bytes: &[u8]) -> Self {
        HashAlgorithm::Sha256.digest(bytes)
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn digest(&self) -> &[u8] {
        &self.digest
    }

    pub fn hex_digest(&self) -> String {
        hex::encode(&self.digest)
    }

    /// True if `bytes` hash to this value under this hash's algorithm.
    pub fn matches(&self, bytes: &[u8]) -> bool {
        self.algorithm.digest(bytes) == *self
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm, self.hex_digest())
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({self})")
    }
}

impl FromStr for Hash {
    type Err = HashParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (alg, hex_part) = s.split_once(':').ok_or(HashParseError::MissingAlgorithm)?;
        let algorithm = HashAlgorithm::from_identifier(alg)
            .ok_or_else(|| HashParseError::UnknownAlgorithm(alg.to_string()))?;
        if !hex_part
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(HashParseError::BadHex);
        }
        let digest = hex::decode(hex_part).map_err(|_| HashParseError::BadHex)?;
        Hash::new(algorithm, digest)
    }
}

impl Serialize for Hash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
