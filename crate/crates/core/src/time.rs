//! UTC instants with millisecond resolution and injectable clocks.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampParseError {
    #[error("not an RFC 3339 timestamp: {0}")]
    Syntax(String),
    #[error("sub-millisecond precision is not representable")]
    Precision,
}

/// A UTC instant, stored as milliseconds since the Unix epoch.
///
/// The canonical text form is RFC 3339 in UTC with a `Z` suffix; fractional
/// seconds appear only when non-zero and then always with three digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.0).unwrap_or(DateTime::<Utc>::MIN_UTC)
    }

    pub fn saturating_add(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_add(d.as_millis().min(i64::MAX as u128) as i64))
    }

    pub fn saturating_sub(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_sub(d.as_millis().min(i64::MAX as u128) as i64))
    }

    pub fn now() -> Self {
        Timestamp::from_datetime(Utc::now())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = self.to_datetime();
        let fmt = if self.0.rem_euclid(1000) == 0 {
            SecondsFormat::Secs
        } else {
            SecondsFormat::Millis
        };
        f.write_str(&dt.to_rfc3339_opts(fmt, true))
    }
}

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dt = DateTime::parse_from_rfc3339(s)
            .map_err(|e| TimestampParseError::Syntax(format!("{s}: {e}")))?;
        if dt.timestamp_subsec_nanos() % 1_000_000 != 0 {
            return Err(TimestampParseError::Precision);
        }
        Ok(Timestamp(dt.timestamp_millis()))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of the current time. Everything that compares against deadlines
/// reads one of these instead of the system clock directly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// A shared clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    millis: Arc<AtomicI64>,
}

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            millis: Arc::new(AtomicI64::new(start.as_millis())),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.millis
            .fetch_add(d.as_millis() as i64, Ordering::AcqRel);
    }

    /// Moves the clock to `t`. The clock never moves backwards.
    pub fn set(&self, t: Timestamp) {
        self.millis.fetch_max(t.as_millis(), Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.millis.load(Ordering::Acquire))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_form() {
        let t: Timestamp = "2024-03-01T12:00:00Z".parse().unwrap();
        assert_eq!(t.to_string(), "2024-03-01T12:00:00Z");
        let t = t.saturating_add(Duration::from_millis(5));
        assert_eq!(t.to_string(), "2024-03-01T12:00:00.005Z");
        let offset: Timestamp = "2024-03-01T13:00:00+01:00".parse().unwrap();
        assert_eq!(offset.to_string(), "2024-03-01T12:00:00Z");
    }

    #[test]
    fn rejects_sub_millisecond() {
        assert_eq!(
            "2024-03-01T12:00:00.0000001Z".parse::<Timestamp>(),
            Err(TimestampParseError::Precision)
        );
    }

    #[test]
    fn virtual_clock_moves_only_forward() {
        let clock = VirtualClock::new(Timestamp::from_millis(1_000));
        clock.advance(Duration::from_millis(10));
        assert_eq!(clock.now().as_millis(), 1_010);
        clock.set(Timestamp::from_millis(500));
        assert_eq!(clock.now().as_millis(), 1_010);
        let shared = clock.clone();
        shared.set(Timestamp::from_millis(2_000));
        assert_eq!(clock.now().as_millis(), 2_000);
    }
}
