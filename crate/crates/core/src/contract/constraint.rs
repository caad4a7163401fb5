use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::pattern::Pattern;
use super::value::{Value, ValueKind};

/// A set of acceptable values for one proposal key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum Constraint {
    Exact(Value),
    /// Inclusive on both ends; integer, decimal or timestamp.
    Range { lo: Value, hi: Value },
    /// Full-string match over text values, in the restricted dialect of
    /// [`Pattern`].
    Regex(String),
    OneOf(Vec<Value>),
    Any,
}

impl Constraint {
    pub fn range(lo: Value, hi: Value) -> Self {
        Constraint::Range { lo, hi }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Constraint::Exact(_))
    }

    pub fn check(&self) -> Result<(), String> {
        match self {
            Constraint::Exact(v) => v.check(),
            Constraint::Range { lo, hi } => {
                let orderable = matches!(
                    lo.kind(),
                    ValueKind::Integer | ValueKind::Decimal | ValueKind::Timestamp
                );
                match lo.ordered_cmp(hi) {
                    Some(Ordering::Greater) => Err("range has lo > hi".into()),
                    Some(_) if orderable => Ok(()),
                    _ => Err(format!(
                        "range endpoints must share an orderable kind, found {:?} and {:?}",
                        lo.kind(),
                        hi.kind()
                    )),
                }
            }
            Constraint::Regex(p) => Pattern::compile(p).map(|_| ()).map_err(|e| e.to_string()),
            Constraint::OneOf(options) => {
                let first = options.first().ok_or("oneOf must not be empty")?;
                for (i, v) in options.iter().enumerate() {
                    v.check()?;
                    if v.kind() != first.kind() {
                        return Err("oneOf members must share a kind".into());
                    }
                    if options[..i].contains(v) {
                        return Err(format!("oneOf member {v} is repeated"));
                    }
                }
                Ok(())
            }
            Constraint::Any => Ok(()),
        }
    }

    /// Total: malformed constraints and cross-kind comparisons match nothing.
    pub fn matches(&self, value: &Value) -> bool {
        match self {
            Constraint::Exact(v) => v == value,
            Constraint::Range { lo, hi } => {
                matches!(lo.ordered_cmp(value), Some(Ordering::Less | Ordering::Equal))
                    && matches!(value.ordered_cmp(hi), Some(Ordering::Less | Ordering::Equal))
            }
            Constraint::Regex(p) => match value {
                Value::Text(t) => Pattern::compile(p).is_ok_and(|pat| pat.is_match(t)),
                _ => false,
            },
            Constraint::OneOf(options) => options.contains(value),
            Constraint::Any => true,
        }
    }
}

/// `matchConstraint`.
pub fn match_constraint(constraint: &Constraint, value: &Value) -> bool {
    constraint.matches(value)
}
