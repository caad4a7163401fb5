//! Parameter types: named predicates over [`Value`]s.
//!
//! Built-ins: `text`, `int`, `positiveInt`, `decimal`, `currencyAmount`,
//! `timestamp`, `party`, `reference`, `optionalReference` and the
//! parametric `enum(A,B,...)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::value::{is_identifier, Value};

pub type Predicate = Arc<dyn Fn(&Value) -> bool + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type `{0}` is already registered")]
pub struct DuplicateType(pub String);

/// The token accepted by `optionalReference` in place of a reference.
pub const NO_REFERENCE: &str = "none";

#[derive(Clone)]
pub struct TypeRegistry {
    types: BTreeMap<String, Predicate>,
}

impl fmt::Debug for TypeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.types.keys()).finish()
    }
}

impl Default for TypeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TypeRegistry {
    pub fn empty() -> Self {
        Self {
            types: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let builtins: [(&str, fn(&Value) -> bool); 9] = [
            ("text", |v| matches!(v, Value::Text(_))),
            ("int", |v| matches!(v, Value::Integer(_))),
            ("positiveInt", |v| matches!(v, Value::Integer(i) if *i > 0)),
            ("decimal", |v| matches!(v, Value::Decimal(_))),
            ("currencyAmount", |v| matches!(v, Value::Text(t) if is_currency_amount(t))),
            ("timestamp", |v| matches!(v, Value::Timestamp(_))),
            ("party", |v| matches!(v, Value::Party(_))),
            ("reference", |v| matches!(v, Value::Reference(_))),
            ("optionalReference", |v| match v {
                Value::Reference(_) => true,
                Value::Token(t) => t == NO_REFERENCE,
                _ => false,
            }),
        ];
        for (name, pred) in builtins {
            r.types.insert(name.to_string(), Arc::new(pred));
        }
        r
    }

    pub fn register(&mut self, name: impl Into<String>, predicate: Predicate) -> Result<(), DuplicateType> {
        let name = name.into();
        if self.types.contains_key(&name) || parse_enum(&name).is_some() {
            return Err(DuplicateType(name));
        }
        self.types.insert(name, predicate);
        Ok(())
    }

    /// Predicate for `type_name`, or `None` if the name is not registered.
    pub fn resolve(&self, type_name: &str) -> Option<Predicate> {
        if let Some(p) = self.types.get(type_name) {
            return Some(p.clone());
        }
        let members = parse_enum(type_name)?;
        Some(Arc::new(move |v: &Value| {
            matches!(v, Value::Token(t) if members.iter().any(|m| m == t))
        }))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }
}

/// `enum(A,B,C)` with identifier members, pairwise distinct.
fn parse_enum(name: &str) -> Option<Vec<String>> {
    let inner = name.strip_prefix("enum(")?.strip_suffix(')')?;
    let members: Vec<String> = inner.split(',').map(|m| m.trim().to_string()).collect();
    if members.iter().any(|m| !is_identifier(m)) {
        return None;
    }
    let mut sorted = members.clone();
    sorted.sort();
    sorted.dedup();
    (sorted.len() == members.len()).then_some(members)
}

/// `<amount> <CCY>`: amount is `-?digits(.digits)?`, code is three
/// uppercase ASCII letters.
pub fn is_currency_amount(text: &str) -> bool {
    let Some((amount, code)) = text.split_once(' ') else {
        return false;
    };
    if code.len() != 3 || !code.bytes().all(|b| b.is_ascii_uppercase()) {
        return false;
    }
    let digits = amount.strip_prefix('-').unwrap_or(amount);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    all_digits(int) && frac.is_none_or(all_digits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins() {
        let r = TypeRegistry::builtin();
        let check = |ty: &str, v: Value| (r.resolve(ty).unwrap())(&v);
        assert!(check("positiveInt", Value::Integer(1)));
        assert!(!check("positiveInt", Value::Integer(0)));
        assert!(!check("int", Value::text("1")));
        assert!(check("currencyAmount", Value::text("1234.50 EUR")));
        assert!(!check("currencyAmount", Value::text("1234.50 eur")));
        assert!(!check("currencyAmount", Value::text("1234. EUR")));
        assert!(!check("currencyAmount", Value::text("EUR 12")));
        assert!(check("enum(EUR,SEK)", Value::token("SEK")));
        assert!(!check("enum(EUR,SEK)", Value::token("USD")));
        assert!(!check("enum(EUR,SEK)", Value::text("SEK")));
        assert!(check("optionalReference", Value::token("none")));
        assert!(r.resolve("enum(A,A)").is_none());
        assert!(r.resolve("float").is_none());
    }

    #[test]
    fn custom_types() {
        let mut r = TypeRegistry::builtin();
        r.register("evenInt", Arc::new(|v| matches!(v, Value::Integer(i) if i % 2 == 0)))
            .unwrap();
        assert!((r.resolve("evenInt").unwrap())(&Value::Integer(4)));
        assert_eq!(
            r.register("int", Arc::new(|_| true)),
            Err(DuplicateType("int".into()))
        );
    }
}
