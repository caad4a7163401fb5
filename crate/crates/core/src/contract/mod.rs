//! Ricardian templates and contracts.
//!
//! A [`Template`] is legal prose interleaved with typed parameters. A
//! [`Contract`] binds one value to each parameter and refers to its template
//! by hash. A [`ProposalContract`] replaces values with [`Constraint`]s and
//! becomes a contract once every constraint is exact.

mod constraint;
mod instance;
pub mod pattern;
mod template;
mod types;
mod value;

use std::fs;
use std::path::Path;

use serde_json::Value as Json;

pub use constraint::{match_constraint, Constraint};
pub use instance::{
    extract_references, refine_proposal, render_contract, validate_contract, validate_proposal,
    Argument, Contract, Finding, KeyConstraint, ProposalContract, RefineError, Refined,
    RenderError, ValidationError, ValidationReport,
};
pub use template::{parse_provision, Element, Parameter, Segment, Template};
pub use types::{is_currency_amount, DuplicateType, Predicate, TypeRegistry, NO_REFERENCE};
pub use value::{is_identifier, Decimal, DecimalParseError, Value, ValueKind};

use crate::canonical::{self, CanonicalError, Document};
use crate::hash::Hash;

/// File extension for document interchange.
pub const FILE_EXTENSION: &str = ".rcn.json";

/// Any of the three interchange documents, dispatched on `kind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractDocument {
    Template(Template),
    Contract(Contract),
    Proposal(ProposalContract),
}

impl ContractDocument {
    pub fn from_json(value: Json) -> Result<Self, CanonicalError> {
        match canonical::kind_of(&value) {
            Some(Template::KIND) => Ok(ContractDocument::Template(Template::from_value(value)?)),
            Some(Contract::KIND) => Ok(ContractDocument::Contract(Contract::from_value(value)?)),
            Some(ProposalContract::KIND) => {
                Ok(ContractDocument::Proposal(ProposalContract::from_value(value)?))
            }
            other => Err(CanonicalError::WrongKind {
                expected: "template | contract | proposal".into(),
                found: other.unwrap_or_default().to_string(),
            }),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CanonicalError> {
        Self::from_json(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, CanonicalError> {
        let bytes = fs::read(path).map_err(|e| CanonicalError::InvariantViolation(format!("{}: {e}", path.display())))?;
        Self::parse(&bytes)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ContractDocument::Template(_) => Template::KIND,
            ContractDocument::Contract(_) => Contract::KIND,
            ContractDocument::Proposal(_) => ProposalContract::KIND,
        }
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        match self {
            ContractDocument::Template(t) => t.canonical_bytes(),
            ContractDocument::Contract(c) => c.canonical_bytes(),
            ContractDocument::Proposal(p) => p.canonical_bytes(),
        }
    }

    pub fn hash(&self) -> Result<Hash, CanonicalError> {
        Ok(Hash::of_bytes(&self.canonical_bytes()?))
    }

    /// Authored (pretty, author-ordered) JSON text.
    pub fn to_pretty(&self) -> Result<String, CanonicalError> {
        let value = match self {
            ContractDocument::Template(t) => canonical::tagged(Template::KIND, t)?,
            ContractDocument::Contract(c) => canonical::tagged(Contract::KIND, c)?,
            ContractDocument::Proposal(p) => canonical::tagged(ProposalContract::KIND, p)?,
        };
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}
