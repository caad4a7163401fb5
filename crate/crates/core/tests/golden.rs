//! Canonical bytes and hashes for fixed documents, produced by the
//! independent generator in `tests/golden/generate.py` and frozen here.

use conet_core::canonical::{self, to_canonical_bytes};
use conet_core::contract::ContractDocument;
use conet_core::net::{decode_frame, encode_frame};
use conet_core::{Hash, Identity, SignedEnvelope};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Vector {
    name: String,
    kind: String,
    input: String,
    canonical: String,
    hash: Hash,
    payload: Option<String>,
    payload_kind: Option<String>,
}

fn vectors() -> Vec<Vector> {
    serde_json::from_str(include_str!("golden/vectors.json")).expect("vectors parse")
}

fn seed(hex_text: &str) -> [u8; 32] {
    hex::decode(hex_text).unwrap().try_into().unwrap()
}

/// Checks one vector; `Err` names what differed.
fn check(v: &Vector) -> Result<(), String> {
    let expect = |what: &str, found: &[u8], expected: &[u8]| {
        if found == expected {
            Ok(())
        } else {
            Err(format!(
                "{what}: expected {}, found {}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ))
        }
    };
    let canonical = v.canonical.as_bytes();
    match v.kind.as_str() {
        "json" => {
            let value: serde_json::Value = serde_json::from_str(&v.input).map_err(|e| e.to_string())?;
            let bytes = to_canonical_bytes(&value).map_err(|e| e.to_string())?;
            expect("canonical bytes", &bytes, canonical)?;
            expect("hash", Hash::of_bytes(&bytes).to_string().as_bytes(), v.hash.to_string().as_bytes())
        }
        "template" | "contract" | "proposal" => {
            let doc = ContractDocument::parse(v.input.as_bytes()).map_err(|e| e.to_string())?;
            if doc.kind() != v.kind {
                return Err(format!("parsed as {}", doc.kind()));
            }
            let bytes = doc.canonical_bytes().map_err(|e| e.to_string())?;
            expect("canonical bytes", &bytes, canonical)?;
            let hash = doc.hash().map_err(|e| e.to_string())?;
            expect("hash", hash.to_string().as_bytes(), v.hash.to_string().as_bytes())?;
            let again = ContractDocument::parse(canonical).map_err(|e| e.to_string())?;
            (again == doc).then_some(()).ok_or("canonical form does not round-trip".into())
        }
        "party" => {
            let id = Identity::from_secret_bytes("golden", seed(&v.input));
            expect("party id", id.party_id().to_string().as_bytes(), canonical)?;
            expect("fingerprint", id.party_id().fingerprint().to_string().as_bytes(), v.hash.to_string().as_bytes())
        }
        "envelope" => {
            let id = Identity::from_secret_bytes("golden", seed(&v.input));
            let payload = v.payload.clone().ok_or("missing payload")?.into_bytes();
            let env = id
                .sign(v.payload_kind.as_deref().ok_or("missing payload kind")?, payload)
                .map_err(|e| e.to_string())?;
            expect("wire bytes", &env.to_wire_bytes(), canonical)?;
            expect("envelope hash", env.envelope_hash().to_string().as_bytes(), v.hash.to_string().as_bytes())?;
            let decoded = SignedEnvelope::from_wire_bytes(canonical).map_err(|e| e.to_string())?;
            if !decoded.verify_signature(id.verifying_key()) {
                return Err("signature does not verify".into());
            }
            (decoded == env).then_some(()).ok_or("wire form does not round-trip".into())
        }
        "frame" => {
            let expected = hex::decode(&v.canonical).map_err(|e| e.to_string())?;
            let env = SignedEnvelope::from_wire_bytes(v.input.as_bytes()).map_err(|e| e.to_string())?;
            let frame = encode_frame(&env).map_err(|e| e.to_string())?;
            if frame != expected {
                return Err(format!("frame bytes: expected {}, found {}", v.canonical, hex::encode(&frame)));
            }
            expect("hash", Hash::of_bytes(&frame).to_string().as_bytes(), v.hash.to_string().as_bytes())?;
            let decoded = decode_frame(&frame).map_err(|e| e.to_string())?;
            (decoded == env).then_some(()).ok_or("frame does not round-trip".into())
        }
        other => Err(format!("unknown vector kind {other}")),
    }
}

/// Runs every vector, returning `(name, result)` pairs.
pub fn run_all() -> Vec<(String, Result<(), String>)> {
    vectors().iter().map(|v| (v.name.clone(), check(v))).collect()
}

#[test]
fn golden_vectors_reproduce_bit_exactly() {
    let results = run_all();
    assert!(results.len() >= 10);
    let failures: Vec<_> = results.iter().filter(|(_, r)| r.is_err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn golden_documents_reject_non_canonical_wire_bytes() {
    let env = vectors().into_iter().find(|v| v.kind == "envelope").unwrap();
    let mut loose = env.canonical.replacen(':', ": ", 1);
    assert!(SignedEnvelope::from_wire_bytes(loose.as_bytes()).is_err());
    loose = env.canonical.clone();
    let at = loose.find("sha-256:").unwrap() + 8;
    let flipped = if &loose[at..at + 1] == "0" { "1" } else { "0" };
    loose.replace_range(at..at + 1, flipped);
    assert!(SignedEnvelope::from_wire_bytes(loose.as_bytes()).is_err());
    assert!(canonical::decode::<conet_core::Contract>(b"{ }").is_err());
}
