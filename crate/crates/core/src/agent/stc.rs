//! State transition contracts: follow-up contracts that record evidence of
//! an obligation-state change and chain back to the original contract.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use thiserror::Error;

use crate::canonical::{self, Document};
use crate::contract::{Contract, Element, Template, Value, NO_REFERENCE};
use crate::hash::Hash;
use crate::time::Timestamp;
use crate::trace::DocumentStore;

pub const ORIGINAL: &str = "original";
pub const PREV_STC: &str = "prevStc";
pub const EVIDENCE: &str = "evidence";
pub const OBSERVED_AT: &str = "observedAt";

/// The fixed template every STC uses.
pub fn stc_template() -> &'static Template {
    static TEMPLATE: OnceLock<Template> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        Template::new(
            "State Transition",
            vec![
                Element::parameter(ORIGINAL, "reference"),
                Element::parameter(PREV_STC, "optionalReference"),
                Element::parameter(EVIDENCE, "reference"),
                Element::parameter(OBSERVED_AT, "timestamp"),
                Element::provision(
                    "The parties agree that, as shown by the evidence ${evidence} observed at ${observedAt}, \
                     the obligations under contract ${original} have moved to their next state. \
                     The previous transition on record is ${prevStc}.",
                ),
            ],
        )
    })
}

pub fn stc_template_hash() -> &'static Hash {
    static HASH: OnceLock<Hash> = OnceLock::new();
    HASH.get_or_init(|| stc_template().hash().expect("STC template is canonical"))
}

pub fn build_stc(original: &Hash, prev: Option<&Hash>, evidence: &Hash, observed_at: Timestamp) -> Contract {
    Contract::new(
        stc_template_hash().clone(),
        [
            (ORIGINAL.to_string(), Value::Reference(original.clone())),
            (
                PREV_STC.to_string(),
                prev.map_or_else(|| Value::token(NO_REFERENCE), |p| Value::Reference(p.clone())),
            ),
            (EVIDENCE.to_string(), Value::Reference(evidence.clone())),
            (OBSERVED_AT.to_string(), Value::Timestamp(observed_at)),
        ],
    )
}

pub fn is_stc(contract: &Contract) -> bool {
    &contract.template == stc_template_hash()
}

/// The fields of an STC, or `None` if `contract` is not a well-formed one.
pub fn stc_fields(contract: &Contract) -> Option<(Hash, Option<Hash>, Hash)> {
    if !is_stc(contract) {
        return None;
    }
    let original = contract.argument(ORIGINAL)?.as_reference()?.clone();
    let evidence = contract.argument(EVIDENCE)?.as_reference()?.clone();
    let prev = match contract.argument(PREV_STC)? {
        Value::Reference(h) => Some(h.clone()),
        Value::Token(t) if t == NO_REFERENCE => None,
        _ => return None,
    };
    Some((original, prev, evidence))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("{0} is not in the store")]
    Missing(Hash),
    #[error("{0} is not a canonical contract")]
    NotAContract(Hash),
    #[error("{0} is not a state transition contract")]
    NotAnStc(Hash),
    #[error("link {link} names original {found}, chain head names {expected}")]
    OriginalMismatch { link: Hash, expected: Hash, found: Hash },
    #[error("chain revisits {0}")]
    Cycle(Hash),
    #[error("original {0} is itself a state transition contract")]
    OriginalIsStc(Hash),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StcChain {
    pub original: Hash,
    /// Head first.
    pub links: Vec<Hash>,
}

fn load_contract(store: &DocumentStore, hash: &Hash) -> Result<Contract, ChainError> {
    let bytes = store.get(hash).ok_or_else(|| ChainError::Missing(hash.clone()))?;
    canonical::decode::<Contract>(bytes).map_err(|_| ChainError::NotAContract(hash.clone()))
}

/// Walks `prevStc` links from `head` to the base of the chain, checking
/// that every link, its evidence and the original resolve in `store` and
/// that every link names the same original.
pub fn walk_chain(head: &Hash, store: &DocumentStore) -> Result<StcChain, ChainError> {
    let head_contract = load_contract(store, head)?;
    walk_from(Some(head.clone()), &head_contract, store)
}

/// Checks a proposed STC that is not yet stored: its evidence and original
/// resolve and its predecessor chain is sound with the same original.
pub fn check_candidate(candidate: &Contract, store: &DocumentStore) -> Result<StcChain, ChainError> {
    walk_from(None, candidate, store)
}

fn walk_from(head: Option<Hash>, head_contract: &Contract, store: &DocumentStore) -> Result<StcChain, ChainError> {
    let label = head.clone().unwrap_or_else(|| head_contract.hash().expect("contract hashes"));
    let (original, mut prev, evidence) =
        stc_fields(head_contract).ok_or_else(|| ChainError::NotAnStc(label.clone()))?;
    if !store.contains(&evidence) {
        return Err(ChainError::Missing(evidence));
    }
    let mut links: Vec<Hash> = head.into_iter().collect();
    let mut seen: BTreeSet<Hash> = links.iter().cloned().collect();
    while let Some(link) = prev {
        if !seen.insert(link.clone()) {
            return Err(ChainError::Cycle(link));
        }
        let c = load_contract(store, &link)?;
        let (o, p, e) = stc_fields(&c).ok_or_else(|| ChainError::NotAnStc(link.clone()))?;
        if o != original {
            return Err(ChainError::OriginalMismatch {
                link,
                expected: original,
                found: o,
            });
        }
        if !store.contains(&e) {
            return Err(ChainError::Missing(e));
        }
        links.push(link);
        prev = p;
    }
    let base = load_contract(store, &original)?;
    if is_stc(&base) {
        return Err(ChainError::OriginalIsStc(original));
    }
    Ok(StcChain { original, links })
}
