use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::constraint::Constraint;
use super::template::{parse_provision, Segment, Template};
use super::types::TypeRegistry;
use super::value::{is_identifier, Value};
use crate::canonical::{self, CanonicalError, Document};
use crate::hash::Hash;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Argument {
    pub key: String,
    pub value: Value,
}

/// A template invocation: one value per template parameter.
///
/// Arguments keep their author order in memory and in authored files; the
/// canonical encoding sorts them by key. Equality ignores argument order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contract {
    pub template: Hash,
    pub arguments: Vec<Argument>,
}

fn sorted_by_key<T: Clone>(items: &[T], key: impl Fn(&T) -> &str) -> Vec<T> {
    let mut out = items.to_vec();
    out.sort_by(|a, b| key(a).as_bytes().cmp(key(b).as_bytes()));
    out
}

fn check_keys<'a>(keys: impl Iterator<Item = &'a str>) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for k in keys {
        if !is_identifier(k) {
            return Err(format!("key `{k}` is not an identifier"));
        }
        if !seen.insert(k) {
            return Err(format!("duplicate key `{k}`"));
        }
    }
    Ok(())
}

impl PartialEq for Contract {
    fn eq(&self, other: &Self) -> bool {
        self.template == other.template
            && sorted_by_key(&self.arguments, |a| &a.key) == sorted_by_key(&other.arguments, |a| &a.key)
    }
}

impl Eq for Contract {}

impl Contract {
    pub fn new(template: Hash, arguments: impl IntoIterator<Item = (String, Value)>) -> Self {
        Self {
            template,
            arguments: arguments
                .into_iter()
                .map(|(key, value)| Argument { key, value })
                .collect(),
        }
    }

    pub fn argument(&self, key: &str) -> Option<&Value> {
        self.arguments.iter().find(|a| a.key == key).map(|a| &a.value)
    }

    pub fn check(&self) -> Result<(), String> {
        check_keys(self.arguments.iter().map(|a| a.key.as_str()))?;
        self.arguments.iter().try_for_each(|a| a.value.check())
    }

    /// Every proposal converts back losslessly: all constraints exact.
    pub fn to_proposal(&self) -> ProposalContract {
        ProposalContract {
            template: self.template.clone(),
            constraints: self
                .arguments
                .iter()
                .map(|a| KeyConstraint {
                    key: a.key.clone(),
                    constraint: Constraint::Exact(a.value.clone()),
                })
                .collect(),
        }
    }
}

impl Document for Contract {
    const KIND: &'static str = "contract";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        self.check().map_err(CanonicalError::InvariantViolation)?;
        let sorted = Contract {
            template: self.template.clone(),
            arguments: sorted_by_key(&self.arguments, |a| &a.key),
        };
        canonical::tagged(Self::KIND, &sorted)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let c: Contract = canonical::untagged(Self::KIND, value)?;
        c.check().map_err(CanonicalError::InvariantViolation)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyConstraint {
    pub key: String,
    pub constraint: Constraint,
}

/// A contract whose arguments are constraints rather than values. Complete
/// (and convertible to a [`Contract`]) once every constraint is exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalContract {
    pub template: Hash,
    pub constraints: Vec<KeyConstraint>,
}

impl PartialEq for ProposalContract {
    fn eq(&self, other: &Self) -> bool {
        self.template == other.template
            && sorted_by_key(&self.constraints, |c| &c.key)
                == sorted_by_key(&other.constraints, |c| &c.key)
    }
}

impl Eq for ProposalContract {}

impl ProposalContract {
    pub fn new(template: Hash, constraints: impl IntoIterator<Item = (String, Constraint)>) -> Self {
        Self {
            template,
            constraints: constraints
                .into_iter()
                .map(|(key, constraint)| KeyConstraint { key, constraint })
                .collect(),
        }
    }

    pub fn constraint(&self, key: &str) -> Option<&Constraint> {
        self.constraints
            .iter()
            .find(|c| c.key == key)
            .map(|c| &c.constraint)
    }

    pub fn check(&self) -> Result<(), String> {
        check_keys(self.constraints.iter().map(|c| c.key.as_str()))?;
        for c in &self.constraints {
            c.constraint
                .check()
                .map_err(|e| format!("constraint on `{}`: {e}", c.key))?;
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.constraints.iter().all(|c| c.constraint.is_exact())
    }

    /// The equivalent contract, if every constraint is exact.
    pub fn to_contract(&self) -> Option<Contract> {
        let arguments = self
            .constraints
            .iter()
            .map(|c| match &c.constraint {
                Constraint::Exact(v) => Some(Argument {
                    key: c.key.clone(),
                    value: v.clone(),
                }),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Contract {
            template: self.template.clone(),
            arguments,
        })
    }
}

impl Document for ProposalContract {
    const KIND: &'static str = "proposal";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        self.check().map_err(CanonicalError::InvariantViolation)?;
        let sorted = ProposalContract {
            template: self.template.clone(),
            constraints: sorted_by_key(&self.constraints, |c| &c.key),
        };
        canonical::tagged(Self::KIND, &sorted)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let p: ProposalContract = canonical::untagged(Self::KIND, value)?;
        p.check().map_err(CanonicalError::InvariantViolation)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", content = "name", rename_all = "camelCase")]
pub enum Finding {
    MissingArgument(String),
    ExtraArgument(String),
    DuplicateArgument(String),
    TypeMismatch(String),
    UnknownType(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("contract refers to template {found}, not {expected}")]
    TemplateMismatch { expected: Hash, found: Hash },
    #[error("template is malformed: {0}")]
    Template(#[from] CanonicalError),
}

fn key_set_findings<'a>(
    template: &'a Template,
    keys: &[&'a str],
    report: &mut ValidationReport,
) {
    let declared = template.parameter_keys();
    let mut seen = BTreeSet::new();
    for &k in keys {
        if !seen.insert(k) {
            report.findings.push(Finding::DuplicateArgument(k.to_string()));
        } else if !declared.contains(k) {
            report.findings.push(Finding::ExtraArgument(k.to_string()));
        }
    }
    for p in template.parameters() {
        if !seen.contains(p.key.as_str()) {
            report.findings.push(Finding::MissingArgument(p.key.clone()));
        }
    }
}

/// `validateContract`: key sets must be equal and every value must satisfy
/// its parameter's type predicate.
pub fn validate_contract(
    contract: &Contract,
    template: &Template,
    registry: &TypeRegistry,
) -> Result<ValidationReport, ValidationError> {
    let expected = template.hash()?;
    if contract.template != expected {
        return Err(ValidationError::TemplateMismatch {
            expected,
            found: contract.template.clone(),
        });
    }
    let mut report = ValidationReport::default();
    let keys: Vec<&str> = contract.arguments.iter().map(|a| a.key.as_str()).collect();
    key_set_findings(template, &keys, &mut report);
    let mut unknown = BTreeSet::new();
    for p in template.parameters() {
        let Some(value) = contract.argument(&p.key) else {
            continue;
        };
        match registry.resolve(&p.type_name) {
            Some(pred) => {
                if !pred(value) {
                    report.findings.push(Finding::TypeMismatch(p.key.clone()));
                }
            }
            None => {
                if unknown.insert(p.type_name.as_str()) {
                    report.findings.push(Finding::UnknownType(p.type_name.clone()));
                }
            }
        }
    }
    Ok(report)
}

/// Key-set and type checks for a proposal; only `exact` constraints can be
/// type-checked.
pub fn validate_proposal(
    proposal: &ProposalContract,
    template: &Template,
    registry: &TypeRegistry,
) -> Result<ValidationReport, ValidationError> {
    let expected = template.hash()?;
    if proposal.template != expected {
        return Err(ValidationError::TemplateMismatch {
            expected,
            found: proposal.template.clone(),
        });
    }
    let mut report = ValidationReport::default();
    let keys: Vec<&str> = proposal.constraints.iter().map(|c| c.key.as_str()).collect();
    key_set_findings(template, &keys, &mut report);
    for p in template.parameters() {
        let Some(c) = proposal.constraint(&p.key) else {
            continue;
        };
        match registry.resolve(&p.type_name) {
            Some(pred) => {
                let ok = match c {
                    Constraint::Exact(v) => pred(v),
                    Constraint::OneOf(vs) => vs.iter().all(|v| pred(v)),
                    _ => true,
                };
                if !ok {
                    report.findings.push(Finding::TypeMismatch(p.key.clone()));
                }
            }
            None => report.findings.push(Finding::UnknownType(p.type_name.clone())),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("placeholder `{0}` names no template parameter")]
    UnboundPlaceholder(String),
    #[error("contract has no argument for `{0}`")]
    MissingArgument(String),
    #[error("malformed provision: {0}")]
    MalformedProvision(String),
}

/// `renderContract`: provisions concatenated in element order with every
/// placeholder replaced by the argument's canonical text form.
pub fn render_contract(contract: &Contract, template: &Template) -> Result<String, RenderError> {
    let declared = template.parameter_keys();
    let mut out = String::new();
    for text in template.provisions() {
        for seg in parse_provision(text).map_err(RenderError::MalformedProvision)? {
            match seg {
                Segment::Literal(s) => out.push_str(&s),
                Segment::Placeholder(key) => {
                    if !declared.contains(key) {
                        return Err(RenderError::UnboundPlaceholder(key.to_string()));
                    }
                    let value = contract
                        .argument(key)
                        .ok_or_else(|| RenderError::MissingArgument(key.to_string()))?;
                    out.push_str(&value.to_string());
                }
            }
        }
    }
    Ok(out)
}

/// `extractReferences`: the template hash plus every reference-valued argument.
pub fn extract_references(contract: &Contract) -> BTreeSet<Hash> {
    let mut refs = BTreeSet::from([contract.template.clone()]);
    refs.extend(
        contract
            .arguments
            .iter()
            .filter_map(|a| a.value.as_reference().cloned()),
    );
    refs
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefineError {
    #[error("proposal has no key `{0}`")]
    UnknownKey(String),
    #[error("value for `{0}` violates its constraint")]
    ConstraintViolated(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Refined {
    Proposal(ProposalContract),
    Contract(Contract),
}

impl Refined {
    pub fn into_proposal(self) -> ProposalContract {
        match self {
            Refined::Proposal(p) => p,
            Refined::Contract(c) => c.to_proposal(),
        }
    }
}

/// `refineProposal`: narrows assigned keys to `exact`. The result is a
/// contract once every key is exact; an empty assignment list returns the
/// proposal unchanged.
pub fn refine_proposal(
    proposal: &ProposalContract,
    assignments: &[(String, Value)],
) -> Result<Refined, RefineError> {
    if assignments.is_empty() {
        return Ok(Refined::Proposal(proposal.clone()));
    }
    let mut assigned: BTreeMap<&str, &Value> = BTreeMap::new();
    for (key, value) in assignments {
        let current = proposal
            .constraint(key)
            .ok_or_else(|| RefineError::UnknownKey(key.clone()))?;
        if !current.matches(value) {
            return Err(RefineError::ConstraintViolated(key.clone()));
        }
        if assigned.insert(key, value).is_some_and(|prev| prev != value) {
            return Err(RefineError::ConstraintViolated(key.clone()));
        }
    }
    let refined = ProposalContract {
        template: proposal.template.clone(),
        constraints: proposal
            .constraints
            .iter()
            .map(|c| KeyConstraint {
                key: c.key.clone(),
                constraint: match assigned.get(c.key.as_str()) {
                    Some(v) => Constraint::Exact((*v).clone()),
                    None => c.constraint.clone(),
                },
            })
            .collect(),
    };
    Ok(match refined.to_contract() {
        Some(contract) => Refined::Contract(contract),
        None => Refined::Proposal(refined),
    })
}
