use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

/// Identity of one time series: metric name plus its full label set.
///
/// Labels are kept sorted by name. Keys produced by query evaluation may carry
/// an empty metric name (functions and operators drop it); keys stored in a
/// [`TimeSeriesStore`](super::TimeSeriesStore) always have a valid one.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub metric_name: String,
    pub labels: BTreeMap<String, String>,
}

pub fn is_valid_metric_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

pub fn is_valid_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SeriesKey {
    pub fn new<N, I, K, V>(metric_name: N, labels: I) -> Result<Self, MetricsError>
    where
        N: Into<String>,
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let metric_name = metric_name.into();
        if !is_valid_metric_name(&metric_name) {
            return Err(MetricsError::InvalidMetricName(metric_name));
        }
        let mut map = BTreeMap::new();
        for (k, v) in labels {
            let k = k.into();
            if !is_valid_label_name(&k) {
                return Err(MetricsError::InvalidLabelName(k));
            }
            if map.insert(k.clone(), v.into()).is_some() {
                return Err(MetricsError::DuplicateLabel(k));
            }
        }
        Ok(SeriesKey { metric_name, labels: map })
    }

    /// A key with no labels.
    pub fn metric(name: &str) -> Result<Self, MetricsError> {
        Self::new(name, std::iter::empty::<(String, String)>())
    }

    /// A result key without a metric name.
    pub fn unnamed(labels: BTreeMap<String, String>) -> Self {
        SeriesKey { metric_name: String::new(), labels }
    }

    pub fn label(&self, name: &str) -> Option<&str> {
        self.labels.get(name).map(String::as_str)
    }

    pub fn with_label(mut self, name: &str, value: &str) -> Self {
        self.labels.insert(name.to_string(), value.to_string());
        self
    }

    pub fn without_name(&self) -> SeriesKey {
        SeriesKey::unnamed(self.labels.clone())
    }

    /// The canonical `name{a="x",b="y"}` form; labels in sorted order.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

pub(crate) fn escape_label_value(v: &str, out: &mut String) {
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metric_name)?;
        if self.labels.is_empty() && !self.metric_name.is_empty() {
            return Ok(());
        }
        let mut s = String::from("{");
        for (i, (k, v)) in self.labels.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(k);
            s.push_str("=\"");
            escape_label_value(v, &mut s);
            s.push('"');
        }
        s.push('}');
        f.write_str(&s)
    }
}

/// One timestamped value of a series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub series: SeriesKey,
    pub timestamp: Timestamp,
    pub value: f64,
}

impl MetricSample {
    pub fn new(series: SeriesKey, timestamp: Timestamp, value: f64) -> Self {
        MetricSample { series, timestamp, value }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchOp {
    #[serde(rename = "=")]
    Equal,
    #[serde(rename = "!=")]
    NotEqual,
    #[serde(rename = "=~")]
    Regex,
    #[serde(rename = "!~")]
    NotRegex,
}

impl MatchOp {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchOp::Equal => "=",
            MatchOp::NotEqual => "!=",
            MatchOp::Regex => "=~",
            MatchOp::NotRegex => "!~",
        }
    }
}

/// A single label constraint. Regex matchers are anchored at both ends.
#[derive(Clone, Debug)]
pub struct LabelMatcher {
    pub name: String,
    pub op: MatchOp,
    pub value: String,
    regex: Option<Regex>,
}

impl PartialEq for LabelMatcher {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.op == other.op && self.value == other.value
    }
}

impl LabelMatcher {
    pub fn new(name: impl Into<String>, op: MatchOp, value: impl Into<String>) -> Result<Self, MetricsError> {
        let name = name.into();
        let value = value.into();
        let regex = match op {
            MatchOp::Regex | MatchOp::NotRegex => Some(
                Regex::new(&format!("^(?:{})$", value))
                    .map_err(|e| MetricsError::InvalidRegex(value.clone(), e.to_string()))?,
            ),
            _ => None,
        };
        Ok(LabelMatcher { name, op, value, regex })
    }

    pub fn eq(name: &str, value: &str) -> Self {
        Self::new(name, MatchOp::Equal, value).expect("equality matchers always build")
    }

    /// Missing labels match as the empty string.
    pub fn matches(&self, value: Option<&str>) -> bool {
        let v = value.unwrap_or("");
        match self.op {
            MatchOp::Equal => v == self.value,
            MatchOp::NotEqual => v != self.value,
            MatchOp::Regex => self.regex.as_ref().map(|r| r.is_match(v)).unwrap_or(false),
            MatchOp::NotRegex => !self.regex.as_ref().map(|r| r.is_match(v)).unwrap_or(false),
        }
    }
}

impl fmt::Display for LabelMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut v = String::new();
        escape_label_value(&self.value, &mut v);
        write!(f, "{}{}\"{}\"", self.name, self.op.as_str(), v)
    }
}

/// Selects series by optional metric name and label constraints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesMatcher {
    pub metric_name: Option<String>,
    pub matchers: Vec<LabelMatcher>,
}

impl SeriesMatcher {
    pub fn name(name: &str) -> Self {
        SeriesMatcher { metric_name: Some(name.to_string()), matchers: Vec::new() }
    }

    pub fn with(mut self, m: LabelMatcher) -> Self {
        self.matchers.push(m);
        self
    }

    pub fn matches(&self, key: &SeriesKey) -> bool {
        if let Some(n) = &self.metric_name {
            if &key.metric_name != n {
                return false;
            }
        }
        self.matchers.iter().all(|m| {
            if m.name == "__name__" {
                m.matches(Some(&key.metric_name))
            } else {
                m.matches(key.label(&m.name))
            }
        })
    }
}

impl fmt::Display for SeriesMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(n) = &self.metric_name {
            f.write_str(n)?;
        }
        if !self.matchers.is_empty() || self.metric_name.is_none() {
            f.write_str("{")?;
            for (i, m) in self.matchers.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{m}")?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_names() {
        assert!(SeriesKey::metric("http_requests_total").is_ok());
        assert!(SeriesKey::metric("ns:metric").is_ok());
        assert!(SeriesKey::metric("1abc").is_err());
        assert!(SeriesKey::new("m", [("bad-name", "x")]).is_err());
        assert!(SeriesKey::new("m", [("a", "x"), ("a", "y")]).is_err());
    }

    #[test]
    fn canonical_sorted_and_escaped() {
        let k = SeriesKey::new("m", [("z", "1"), ("a", "q\"\n\\")]).unwrap();
        assert_eq!(k.canonical(), r#"m{a="q\"\n\\",z="1"}"#);
        assert_eq!(SeriesKey::metric("up").unwrap().canonical(), "up");
    }

    #[test]
    fn regex_is_fully_anchored() {
        let m = LabelMatcher::new("code", MatchOp::Regex, "5..").unwrap();
        assert!(m.matches(Some("500")));
        assert!(!m.matches(Some("5000")));
        assert!(!m.matches(Some("1500")));
        let n = LabelMatcher::new("code", MatchOp::NotRegex, "5..").unwrap();
        assert!(n.matches(None));
        assert!(!n.matches(Some("503")));
    }
}
