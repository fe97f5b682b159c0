//! Duration literals of the form `[0-9]+(s|m|h|d)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const SECOND: u64 = 1_000;
const MINUTE: u64 = 60 * SECOND;
const HOUR: u64 = 60 * MINUTE;
const DAY: u64 = 24 * HOUR;

/// A non-negative span of time with millisecond resolution.
///
/// Parsed from and printed as the query-language literal form (`5m`, `30d`).
/// Printing picks the largest unit that divides the value evenly, so
/// `Duration::from_secs(3600)` prints as `1h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration {0:?}: expected digits followed by one of s, m, h, d")]
pub struct DurationParseError(pub String);

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_millis(ms: u64) -> Self {
        Duration(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        Duration(s * SECOND)
    }

    pub const fn from_mins(m: u64) -> Self {
        Duration(m * MINUTE)
    }

    pub const fn from_hours(h: u64) -> Self {
        Duration(h * HOUR)
    }

    pub const fn from_days(d: u64) -> Self {
        Duration(d * DAY)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    /// Signed milliseconds, for timestamp arithmetic.
    pub fn as_millis_i64(self) -> i64 {
        self.0 as i64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn to_std(self) -> std::time::Duration {
        std::time::Duration::from_millis(self.0)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0;
        if ms == 0 {
            return f.write_str("0s");
        }
        for (unit, suffix) in [(DAY, 'd'), (HOUR, 'h'), (MINUTE, 'm'), (SECOND, 's')] {
            if ms % unit == 0 {
                return write!(f, "{}{}", ms / unit, suffix);
            }
        }
        // Sub-second spans never come out of the parser; keep them readable anyway.
        write!(f, "{}ms", ms)
    }
}

impl FromStr for Duration {
    type Err = DurationParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DurationParseError(s.to_string());
        let (digits, unit) = s.split_at(s.len().checked_sub(1).ok_or_else(err)?);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let n: u64 = digits.parse().map_err(|_| err())?;
        let unit = match unit {
            "s" => SECOND,
            "m" => MINUTE,
            "h" => HOUR,
            "d" => DAY,
            _ => return Err(err()),
        };
        n.checked_mul(unit).map(Duration).ok_or_else(err)
    }
}

impl Serialize for Duration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
