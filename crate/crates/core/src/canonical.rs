//! Canonical JSON encoding.
//!
//! Rules: object keys sorted bytewise, no insignificant whitespace, UTF-8
//! output, integers in minimal decimal form, and no floating point numbers
//! anywhere. Strings escape only `"`, `\` and control characters below
//! U+0020; the short escapes `\b \f \n \r \t` are used where they exist and
//! `\u00xx` (lowercase hex) otherwise.
//!
//! Every document carries a top-level `kind` field naming its type.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::hash::Hash;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("floating point number in document: {0}")]
    FloatingPoint(String),
    #[error("document violates its invariants: {0}")]
    InvariantViolation(String),
    #[error("expected document kind `{expected}`, found `{found}`")]
    WrongKind { expected: String, found: String },
    #[error("bytes are valid JSON but not in canonical form")]
    NonCanonical,
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Writes `value` in canonical form.
pub fn to_canonical_bytes(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    write_value(value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(CanonicalError::FloatingPoint(n.to_string()));
            }
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_value(v, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for c in s.chars() {
        match c {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

/// A value with a canonical encoding and therefore a content hash.
pub trait Document: Sized {
    /// Value of the top-level `kind` field.
    const KIND: &'static str;

    /// JSON value in canonical shape (ordering of semantic-free lists
    /// already normalized). Must include the `kind` field.
    fn canonical_value(&self) -> Result<Value, CanonicalError>;

    /// Parses a JSON value, checking kind and type invariants. Accepts any
    /// field order and whitespace; use [`decode`] for strict canonical input.
    fn from_value(value: Value) -> Result<Self, CanonicalError>;

    fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        to_canonical_bytes(&self.canonical_value()?)
    }

    fn hash(&self) -> Result<Hash, CanonicalError> {
        Ok(Hash::of_bytes(&self.canonical_bytes()?))
    }
}

/// Parses any JSON text of the document (lenient about whitespace and key order).
pub fn parse<D: Document>(text: &[u8]) -> Result<D, CanonicalError> {
    let value: Value = serde_json::from_slice(text)?;
    D::from_value(value)
}

/// Parses canonical bytes; rejects input that does not re-encode to itself.
pub fn decode<D: Document>(bytes: &[u8]) -> Result<D, CanonicalError> {
    let doc = parse::<D>(bytes)?;
    if doc.canonical_bytes()? != bytes {
        return Err(CanonicalError::NonCanonical);
    }
    Ok(doc)
}

/// Serializes `body` and adds the `kind` field.
pub fn tagged<T: Serialize>(kind: &str, body: &T) -> Result<Value, CanonicalError> {
    let mut value = serde_json::to_value(body)?;
    match value.as_object_mut() {
        Some(map) => {
            map.insert("kind".to_string(), Value::String(kind.to_string()));
        }
        None => {
            return Err(CanonicalError::InvariantViolation(
                "document body must be a JSON object".into(),
            ))
        }
    }
    Ok(value)
}

/// Checks and strips the `kind` field, then deserializes the remainder.
pub fn untagged<T: DeserializeOwned>(kind: &str, value: Value) -> Result<T, CanonicalError> {
    let mut map: Map<String, Value> = match value {
        Value::Object(map) => map,
        other => {
            return Err(CanonicalError::InvariantViolation(format!(
                "expected an object, found {other}"
            )))
        }
    };
    match map.remove("kind") {
        Some(Value::String(found)) if found == kind => {}
        Some(Value::String(found)) => {
            return Err(CanonicalError::WrongKind {
                expected: kind.to_string(),
                found,
            })
        }
        _ => {
            return Err(CanonicalError::WrongKind {
                expected: kind.to_string(),
                found: String::new(),
            })
        }
    }
    Ok(serde_json::from_value(Value::Object(map))?)
}

/// Reads the `kind` field of an arbitrary document without parsing the rest.
pub fn kind_of(value: &Value) -> Option<&str> {
    value.get("kind").and_then(Value::as_str)
}
