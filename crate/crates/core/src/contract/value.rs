use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hash::Hash;
use crate::identity::PartyId;
use crate::time::Timestamp;

/// `[A-Za-z][A-Za-z0-9_-]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a decimal number: `{0}`")]
pub struct DecimalParseError(pub String);

/// An exact decimal kept as its canonical digit string.
///
/// Canonical form: optional `-`, no leading zeros in the integer part, no
/// trailing zeros in the fraction, no `-0`. Parsing accepts non-canonical
/// input such as `007.50` and normalizes it.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Decimal(String);

impl Decimal {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn parts(&self) -> (bool, &str, &str) {
        let (neg, rest) = match self.0.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, self.0.as_str()),
        };
        let (int, frac) = rest.split_once('.').unwrap_or((rest, ""));
        (neg, int, frac)
    }

    /// Value scaled by `10^scale`, if it fits in an `i128` without
    /// dropping non-zero digits.
    pub fn to_scaled(&self, scale: u32) -> Option<i128> {
        let (neg, int, frac) = self.parts();
        if frac.len() > scale as usize {
            return None;
        }
        let mut digits = String::with_capacity(int.len() + scale as usize);
        digits.push_str(int);
        digits.push_str(frac);
        for _ in frac.len()..scale as usize {
            digits.push('0');
        }
        let magnitude: i128 = digits.parse().ok()?;
        Some(if neg { -magnitude } else { magnitude })
    }

    pub fn from_scaled(value: i128, scale: u32) -> Decimal {
        let neg = value < 0;
        let digits = value.unsigned_abs().to_string();
        let scale = scale as usize;
        let padded = if digits.len() <= scale {
            format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
        } else {
            digits
        };
        let (int, frac) = padded.split_at(padded.len() - scale);
        let sign = if neg { "-" } else { "" };
        let text = if frac.is_empty() {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        };
        text.parse().expect("constructed decimal text is valid")
    }
}

impl FromStr for Decimal {
    type Err = DecimalParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DecimalParseError(s.to_string());
        let (neg, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (int, frac) = match rest.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (rest, None),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if let Some(f) = frac {
            if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
        }
        let int = int.trim_start_matches('0');
        let int = if int.is_empty() { "0" } else { int };
        let frac = frac.map(|f| f.trim_end_matches('0')).unwrap_or("");
        let zero = int == "0" && frac.is_empty();
        let mut out = String::with_capacity(s.len());
        if neg && !zero {
            out.push('-');
        }
        out.push_str(int);
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        Ok(Decimal(out))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let (an, ai, af) = self.parts();
        let (bn, bi, bf) = other.parts();
        let magnitude = || {
            ai.len()
                .cmp(&bi.len())
                .then_with(|| ai.cmp(bi))
                .then_with(|| af.cmp(bf))
        };
        match (an, bn) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => magnitude(),
            (true, true) => magnitude().reverse(),
        }
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Decimal({})", self.0)
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// The kind of a [`Value`], used for same-kind checks in constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKind {
    Text,
    Integer,
    Decimal,
    Timestamp,
    Party,
    Reference,
    Token,
}

/// An argument value. There is no floating point variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Value {
    Text(String),
    Integer(i64),
    Decimal(Decimal),
    Timestamp(Timestamp),
    Party(PartyId),
    Reference(Hash),
    /// Enumeration member.
    Token(String),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Text(_) => ValueKind::Text,
            Value::Integer(_) => ValueKind::Integer,
            Value::Decimal(_) => ValueKind::Decimal,
            Value::Timestamp(_) => ValueKind::Timestamp,
            Value::Party(_) => ValueKind::Party,
            Value::Reference(_) => ValueKind::Reference,
            Value::Token(_) => ValueKind::Token,
        }
    }

    pub fn decimal(text: &str) -> Result<Value, DecimalParseError> {
        Ok(Value::Decimal(text.parse()?))
    }

    pub fn token(text: impl Into<String>) -> Value {
        Value::Token(text.into())
    }

    pub fn text(text: impl Into<String>) -> Value {
        Value::Text(text.into())
    }

    /// Ordering between two values of the same orderable kind
    /// (integer, decimal, timestamp). `None` for anything else.
    pub fn ordered_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
            (Value::Decimal(a), Value::Decimal(b)) => Some(a.cmp(b)),
            (Value::Timestamp(a), Value::Timestamp(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        match self {
            Value::Token(t) if !is_identifier(t) => Err(format!("token `{t}` is not an identifier")),
            _ => Ok(()),
        }
    }

    pub fn as_reference(&self) -> Option<&Hash> {
        match self {
            Value::Reference(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_party(&self) -> Option<&PartyId> {
        match self {
            Value::Party(p) => Some(p),
            _ => None,
        }
    }
}

/// Canonical text form, as substituted into rendered provisions.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) | Value::Token(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::Timestamp(t) => write!(f, "{t}"),
            Value::Party(p) => write!(f, "{p}"),
            Value::Reference(h) => write!(f, "{h}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decimal_normalization() {
        let cases = [
            ("0", "0"),
            ("-0", "0"),
            ("-0.000", "0"),
            ("007.50", "7.5"),
            ("1234.50", "1234.5"),
            ("0.10", "0.1"),
            ("-12", "-12"),
        ];
        for (input, canonical) in cases {
            assert_eq!(input.parse::<Decimal>().unwrap().as_str(), canonical, "{input}");
        }
        for bad in ["", "-", ".5", "5.", "1e3", "1.2.3", "+1", "1_000"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_scaling() {
        let d: Decimal = "1234.5".parse().unwrap();
        assert_eq!(d.to_scaled(2), Some(123_450));
        assert_eq!(d.to_scaled(0), None);
        assert_eq!(Decimal::from_scaled(-5, 2).as_str(), "-0.05");
        assert_eq!(Decimal::from_scaled(123_400, 2).as_str(), "1234");
    }

    #[test]
    fn value_json_shape() {
        let v = Value::Integer(500);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"integer":500}"#);
        let d = Value::decimal("12.50").unwrap();
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"decimal":"12.5"}"#);
    }

    proptest! {
        #[test]
        fn decimal_order_matches_scaled_integers(a in -1_000_000_000i64..1_000_000_000, b in -1_000_000_000i64..1_000_000_000, sa in 0u32..6, sb in 0u32..6) {
            let da = Decimal::from_scaled(a as i128, sa);
            let db = Decimal::from_scaled(b as i128, sb);
            // Compare on a common scale of 10^6.
            let ia = a as i128 * 10i128.pow(6 - sa);
            let ib = b as i128 * 10i128.pow(6 - sb);
            prop_assert_eq!(da.cmp(&db), ia.cmp(&ib));
            let reparsed: Decimal = da.as_str().parse().unwrap();
            prop_assert_eq!(reparsed, da);
        }
    }
}
