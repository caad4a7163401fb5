use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::value::is_identifier;
use crate::canonical::{self, CanonicalError, Document};

/// A piece of a provision: literal text or a `${key}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(String),
    Placeholder(&'a str),
}

/// Splits provision text into literals and placeholders.
///
/// `${key}` is a placeholder, `$$` is a literal `$`. Any other `$` is an
/// error, as is a placeholder whose key is not an identifier.
pub fn parse_provision(text: &str) -> Result<Vec<Segment<'_>>, String> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        literal.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(tail) = after.strip_prefix('$') {
            literal.push('$');
            rest = tail;
        } else if let Some(tail) = after.strip_prefix('{') {
            let end = tail
                .find('}')
                .ok_or_else(|| format!("unterminated placeholder in `{text}`"))?;
            let key = &tail[..end];
            if !is_identifier(key) {
                return Err(format!("placeholder key `{key}` is not an identifier"));
            }
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(Segment::Placeholder(key));
            rest = &tail[end + 1..];
        } else {
            return Err(format!("stray `$` in `{text}` (write `$$` for a literal dollar)"));
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Element {
    /// Human-readable text, possibly with `${key}` placeholders.
    Provision(String),
    Parameter(Parameter),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameter {
    pub key: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl Element {
    pub fn provision(text: impl Into<String>) -> Self {
        Element::Provision(text.into())
    }

    pub fn parameter(key: impl Into<String>, type_name: impl Into<String>) -> Self {
        Element::Parameter(Parameter {
            key: key.into(),
            type_name: type_name.into(),
        })
    }
}

/// Legal text with typed parameters. Its hash is always computed from the
/// canonical encoding, never read from input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub title: String,
    pub elements: Vec<Element>,
}

impl Template {
    pub fn new(title: impl Into<String>, elements: Vec<Element>) -> Self {
        Self {
            title: title.into(),
            elements,
        }
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.elements.iter().filter_map(|e| match e {
            Element::Parameter(p) => Some(p),
            Element::Provision(_) => None,
        })
    }

    pub fn parameter(&self, key: &str) -> Option<&Parameter> {
        self.parameters().find(|p| p.key == key)
    }

    pub fn parameter_keys(&self) -> BTreeSet<&str> {
        self.parameters().map(|p| p.key.as_str()).collect()
    }

    pub fn provisions(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().filter_map(|e| match e {
            Element::Provision(p) => Some(p.as_str()),
            Element::Parameter(_) => None,
        })
    }

    /// Checks parameter keys are distinct identifiers and every placeholder
    /// names a declared parameter.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for p in self.parameters() {
            if !is_identifier(&p.key) {
                return Err(format!("parameter key `{}` is not an identifier", p.key));
            }
            if p.type_name.is_empty() {
                return Err(format!("parameter `{}` has an empty type", p.key));
            }
            if !seen.insert(p.key.as_str()) {
                return Err(format!("duplicate parameter key `{}`", p.key));
            }
        }
        for text in self.provisions() {
            for seg in parse_provision(text)? {
                if let Segment::Placeholder(key) = seg {
                    if !seen.contains(key) {
                        return Err(format!("placeholder `${{{key}}}` names no parameter"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Document for Template {
    const KIND: &'static str = "template";

    fn canonical_value(&self) -> Result<Json, CanonicalError> {
        self.check().map_err(CanonicalError::InvariantViolation)?;
        canonical::tagged(Self::KIND, self)
    }

    fn from_value(value: Json) -> Result<Self, CanonicalError> {
        let t: Template = canonical::untagged(Self::KIND, value)?;
        t.check().map_err(CanonicalError::InvariantViolation)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provision_parsing() {
        let segs = parse_provision("Pay $$${price} to ${seller}.").unwrap();
        assert_eq!(
            segs,
            vec![
                Segment::Literal("Pay $".into()),
                Segment::Placeholder("price"),
                Segment::Literal(" to ".into()),
                Segment::Placeholder("seller"),
                Segment::Literal(".".into()),
            ]
        );
        assert!(parse_provision("costs $5").is_err());
        assert!(parse_provision("${open").is_err());
        assert!(parse_provision("${9lives}").is_err());
        assert_eq!(parse_provision("").unwrap(), vec![]);
    }

    #[test]
    fn invariants() {
        let dup = Template::new(
            "t",
            vec![Element::parameter("a", "int"), Element::parameter("a", "text")],
        );
        assert!(dup.check().unwrap_err().contains("duplicate"));

        let unbound = Template::new("t", vec![Element::provision("${missing}")]);
        assert!(unbound.check().is_err());
        assert!(matches!(
            unbound.canonical_bytes(),
            Err(CanonicalError::InvariantViolation(_))
        ));

        // Parameters may be declared after the provision that uses them.
        let late = Template::new(
            "t",
            vec![Element::provision("${a}"), Element::parameter("a", "int")],
        );
        late.check().unwrap();
    }

    #[test]
    fn empty_template_encoding() {
        let t = Template::new("", vec![]);
        assert_eq!(
            t.canonical_bytes().unwrap(),
            br#"{"elements":[],"kind":"template","title":""}"#
        );
    }
}
