use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::canonical::{self, CanonicalError, Document};
use crate::hash::Hash;
use crate::identity::{PartyId, SignedEnvelope};
pub use crate::ids::RequestId;

fn envelopes_to_json(envelopes: &[SignedEnvelope]) -> Vec<Json> {
    envelopes.iter().map(SignedEnvelope::wire_value).collect()
}

fn envelopes_from_json(values: Vec<Json>) -> Result<Vec<SignedEnvelope>, CanonicalError> {
    values
        .into_iter()
        .map(|v| SignedEnvelope::from_json(v).map_err(|e| CanonicalError::InvariantViolation(e.to_string())))
        .collect()
}

/// `t_req`: a batch of hashes the requester wants resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRequest {
    pub request_id: RequestId,
    pub requester: PartyId,
    /// Pairwise distinct, non-empty.
    pub hashes: Vec<Hash>,
    /// Endpoint the answer should be sent to, if not the transport peer.
    pub reply_to: Option<String>,
    /// Envelopes presented to satisfy gated disclosure policies.
    pub evidence: Vec<SignedEnvelope>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct TraceRequestRecord {
    request_id: RequestId,
    requester: PartyId,
    hashes: Vec<Hash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply_to: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    evidence: Vec<Json>,
}

impl TraceRequest {
    pub fn check(&self) -> Result<(), String> {
        if self.hashes.is_empty() {
            return Err("a trace request names at least one hash".into());
        }
        for (i, h) in self.hashes.iter().enumerate() {
            if self.hashes[..i].contains(h) {
                return Err(format!("hash {h} is requested twice"));
            }
        }
        Ok(())
    }
}

impl Document for TraceRequest {
    const KIND: &'static str = "trace-request";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        self.check().map_err(CanonicalError::InvariantViolation)?;
        canonical::tagged(
            Self::KIND,
            &TraceRequestRecord {
                request_id: self.request_id,
                requester: self.requester.clone(),
                hashes: self.hashes.clone(),
                reply_to: self.reply_to.clone(),
                evidence: envelopes_to_json(&self.evidence),
            },
        )
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let r: TraceRequestRecord = canonical::untagged(Self::KIND, value)?;
        let request = TraceRequest {
            request_id: r.request_id,
            requester: r.requester,
            hashes: r.hashes,
            reply_to: r.reply_to,
            evidence: envelopes_from_json(r.evidence)?,
        };
        request.check().map_err(CanonicalError::InvariantViolation)?;
        Ok(request)
    }
}

/// The answer for one requested hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum Answer {
    /// Base64 in the wire form; must re-hash to the requested hash.
    Data(#[serde(with = "base64_bytes")] Vec<u8>),
    Redirect { locator: String, hint: String },
    Denied {
        hint: String,
        /// Template of a contract whose acceptance would grant access.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template: Option<Hash>,
    },
}

impl Answer {
    pub fn denied(hint: impl Into<String>) -> Self {
        Answer::Denied {
            hint: hint.into(),
            template: None,
        }
    }
}

mod base64_bytes {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashAnswer {
    pub hash: Hash,
    pub result: Answer,
}

/// `t_res`: one answer per requested hash, in request order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TraceAnswer {
    pub request_id: RequestId,
    pub responder: PartyId,
    pub answers: Vec<HashAnswer>,
}

impl Document for TraceAnswer {
    const KIND: &'static str = "trace-answer";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(Self::KIND, self)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        canonical::untagged(Self::KIND, value)
    }
}

/// Referenced documents sent alongside an offer without being asked for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentPush {
    pub documents: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentPushRecord {
    documents: Vec<String>,
}

impl Document for DocumentPush {
    const KIND: &'static str = "document-push";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        canonical::tagged(
            Self::KIND,
            &DocumentPushRecord {
                documents: self.documents.iter().map(|d| B64.encode(d)).collect(),
            },
        )
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let r: DocumentPushRecord = canonical::untagged(Self::KIND, value)?;
        let documents = r
            .documents
            .into_iter()
            .map(|d| B64.decode(d).map_err(|e| CanonicalError::InvariantViolation(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(DocumentPush { documents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_json_shapes() {
        let a = HashAnswer {
            hash: Hash::of_bytes(b"x"),
            result: Answer::Data(b"x".to_vec()),
        };
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["result"]["data"], "eA==");
        let d = serde_json::to_value(Answer::denied("ask")).unwrap();
        assert_eq!(d, serde_json::json!({"denied": {"hint": "ask"}}));
    }

    #[test]
    fn request_hashes_must_be_distinct() {
        let h = Hash::of_bytes(b"x");
        let r = TraceRequest {
            request_id: RequestId(1),
            requester: PartyId::from_public_key(&[1; 32]),
            hashes: vec![h.clone(), h],
            reply_to: None,
            evidence: vec![],
        };
        assert!(r.canonical_value().is_err());
    }
}
