use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// UTC instant with millisecond precision, rendered as RFC 3339 with a `Z` suffix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_millis(Utc::now().timestamp_millis())
    }

    pub fn from_millis(ms: i64) -> Self {
        Timestamp(Utc.timestamp_millis_opt(ms).single().expect("timestamp in range"))
    }

    pub fn millis(&self) -> i64 {
        self.0.timestamp_millis()
    }

    pub fn plus_days(&self, days: i64) -> Self {
        Timestamp(self.0 + Duration::days(days))
    }

    pub fn plus_millis(&self, ms: i64) -> Self {
        Self::from_millis(self.millis() + ms)
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = DateTime::parse_from_rfc3339(s)?;
        Ok(Self::from_millis(parsed.timestamp_millis()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let ts: Timestamp = s.parse().map_err(serde::de::Error::custom)?;
        // Only the normalized rendering is accepted so that re-serialization is byte-stable.
        if ts.to_string() != s {
            return Err(serde::de::Error::custom(format!(
                "timestamp {s:?} is not in normalized form {ts}"
            )));
        }
        Ok(ts)
    }
}

/// Source of "now" for every operation that stamps a record.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Timestamp::now)
}

/// A clock pinned to one instant.
pub fn fixed_clock(at: Timestamp) -> Clock {
    Arc::new(move || at)
}

/// A clock that starts at `start` and advances by `step_ms` on every reading.
pub fn stepping_clock(start: Timestamp, step_ms: i64) -> Clock {
    let counter = std::sync::atomic::AtomicI64::new(0);
    Arc::new(move || {
        let n = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        start.plus_millis(n * step_ms)
    })
}
