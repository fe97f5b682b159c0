//! Text exposition format: parsing scraped documents and rendering them back.
//!
//! Grammar per line:
//!
//! ```text
//! # HELP <name> <escaped help text>
//! # TYPE <name> counter|gauge|histogram
//! # <anything else is a comment>
//! <name>[{<label>="<value>",...}] <value> [<timestamp-ms>]
//! ```
//!
//! Label values accept the `\\`, `\"` and `\n` escapes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::series::{escape_label_value, is_valid_label_name, is_valid_metric_name, MetricSample, SeriesKey, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Counter,
    Gauge,
    Histogram,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Counter => "counter",
            MetricKind::Gauge => "gauge",
            MetricKind::Histogram => "histogram",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFamily {
    pub name: String,
    pub kind: MetricKind,
    pub help: Option<String>,
}

impl MetricFamily {
    pub fn new(name: &str, kind: MetricKind) -> Self {
        MetricFamily { name: name.to_string(), kind, help: None }
    }

    pub fn with_help(mut self, help: &str) -> Self {
        self.help = Some(help.to_string());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("exposition body is not valid UTF-8 (first bad byte at offset {offset})")]
pub struct EncodingError {
    pub offset: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Exposition {
    pub samples: Vec<(MetricFamily, MetricSample)>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

/// Parse an exposition document.
///
/// Samples without an explicit timestamp get `scrape_time`. A malformed line
/// produces a diagnostic and parsing continues with the next line.
pub fn parse_exposition(body: &[u8], scrape_time: Timestamp) -> Result<Exposition, EncodingError> {
    let text = std::str::from_utf8(body).map_err(|e| EncodingError { offset: e.valid_up_to() })?;
    let mut declared: HashMap<String, MetricFamily> = HashMap::new();
    let mut out = Exposition::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Err(msg) = parse_meta(rest.trim_start(), &mut declared) {
                out.diagnostics.push(ParseDiagnostic { line: line_no, message: msg });
            }
            continue;
        }
        match parse_sample_line(line, scrape_time) {
            Ok(sample) => {
                let family = resolve_family(&sample.series.metric_name, &declared);
                if let Err(msg) = check_kind(&family, &sample) {
                    out.diagnostics.push(ParseDiagnostic { line: line_no, message: msg });
                    continue;
                }
                out.samples.push((family, sample));
            }
            Err(msg) => out.diagnostics.push(ParseDiagnostic { line: line_no, message: msg }),
        }
    }
    Ok(out)
}

fn parse_meta(rest: &str, declared: &mut HashMap<String, MetricFamily>) -> Result<(), String> {
    let (keyword, tail) = match rest.split_once(' ') {
        Some(p) => p,
        None => return Ok(()),
    };
    match keyword {
        "HELP" => {
            let (name, help) = tail.split_once(' ').unwrap_or((tail, ""));
            if !is_valid_metric_name(name) {
                return Err(format!("invalid metric name {name:?} in HELP"));
            }
            let help = unescape_help(help);
            declared
                .entry(name.to_string())
                .and_modify(|f| f.help = Some(help.clone()))
                .or_insert_with(|| MetricFamily { name: name.to_string(), kind: MetricKind::Gauge, help: Some(help) });
            Ok(())
        }
        "TYPE" => {
            let mut parts = tail.split_whitespace();
            let name = parts.next().ok_or("TYPE without metric name")?;
            let kind = parts.next().ok_or("TYPE without kind")?;
            if !is_valid_metric_name(name) {
                return Err(format!("invalid metric name {name:?} in TYPE"));
            }
            let kind = match kind {
                "counter" => MetricKind::Counter,
                "gauge" | "untyped" | "unknown" => MetricKind::Gauge,
                "histogram" => MetricKind::Histogram,
                other => {
                    // family stays undeclared; its samples parse as gauges
                    return Err(format!("unsupported metric type {other:?}"));
                }
            };
            declared
                .entry(name.to_string())
                .and_modify(|f| f.kind = kind)
                .or_insert_with(|| MetricFamily::new(name, kind));
            Ok(())
        }
        _ => Ok(()),
    }
}

fn unescape_help(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(o) => {
                    out.push('\\');
                    out.push(o);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn resolve_family(sample_name: &str, declared: &HashMap<String, MetricFamily>) -> MetricFamily {
    if let Some(f) = declared.get(sample_name) {
        return f.clone();
    }
    for suffix in ["_bucket", "_sum", "_count"] {
        if let Some(base) = sample_name.strip_suffix(suffix) {
            if let Some(f) = declared.get(base).filter(|f| f.kind == MetricKind::Histogram) {
                return f.clone();
            }
        }
    }
    if let Some(base) = sample_name.strip_suffix("_total") {
        if let Some(f) = declared.get(base).filter(|f| f.kind == MetricKind::Counter) {
            return f.clone();
        }
    }
    MetricFamily::new(sample_name, MetricKind::Gauge)
}

fn check_kind(family: &MetricFamily, sample: &MetricSample) -> Result<(), String> {
    match family.kind {
        MetricKind::Counter if sample.value < 0.0 => Err(format!("negative counter value {}", sample.value)),
        MetricKind::Histogram if sample.series.metric_name.ends_with("_bucket") && sample.series.label("le").is_none() => {
            Err("histogram bucket without le label".to_string())
        }
        _ => Ok(()),
    }
}

fn parse_sample_line(line: &str, scrape_time: Timestamp) -> Result<MetricSample, String> {
    let mut cur = Cursor::new(line);
    let series = cur.series_key()?;
    if !cur.skip_ws() {
        return Err(format!("expected whitespace before value at column {}", cur.pos + 1));
    }
    let value_tok = cur.token();
    let value = parse_value(value_tok).ok_or_else(|| format!("invalid sample value {value_tok:?}"))?;
    cur.skip_ws();
    let timestamp = if cur.at_end() {
        scrape_time
    } else {
        let ts_tok = cur.token();
        let ts: Timestamp = ts_tok.parse().map_err(|_| format!("invalid timestamp {ts_tok:?}"))?;
        if ts < 0 {
            return Err(format!("negative timestamp {ts}"));
        }
        cur.skip_ws();
        if !cur.at_end() {
            return Err(format!("trailing characters at column {}", cur.pos + 1));
        }
        ts
    };
    Ok(MetricSample { series, timestamp, value })
}

fn parse_value(tok: &str) -> Option<f64> {
    match tok {
        "+Inf" | "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        "NaN" => Some(f64::NAN),
        t => {
            // reject Rust-only spellings like "inf" / "infinity"
            if t.bytes().any(|b| b.is_ascii_alphabetic() && b != b'e' && b != b'E') {
                None
            } else {
                t.parse().ok()
            }
        }
    }
}

/// Parse a canonical `name{labels}` series string.
pub fn parse_series_key(s: &str) -> Result<SeriesKey, String> {
    let mut cur = Cursor::new(s);
    let k = cur.series_key()?;
    if !cur.at_end() {
        return Err(format!("trailing characters at column {}", cur.pos + 1));
    }
    Ok(k)
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Cursor { s, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.s.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) -> bool {
        let start = self.pos;
        while matches!(self.peek(), Some(' ') | Some('\t')) {
            self.pos += 1;
        }
        self.pos > start
    }

    fn token(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.s[start..self.pos]
    }

    fn ident(&mut self, metric: bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let ok = c.is_ascii_alphanumeric() || c == '_' || (metric && c == ':');
            if !ok {
                break;
            }
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(format!("expected {c:?} at column {}", self.pos + 1))
        }
    }

    fn series_key(&mut self) -> Result<SeriesKey, String> {
        let name = self.ident(true);
        if !is_valid_metric_name(name) {
            return Err(format!("invalid metric name {name:?}"));
        }
        let mut labels = BTreeMap::new();
        if self.peek() == Some('{') {
            self.pos += 1;
            loop {
                self.skip_ws();
                if self.peek() == Some('}') {
                    self.pos += 1;
                    break;
                }
                let lname = self.ident(false);
                if !is_valid_label_name(lname) {
                    return Err(format!("invalid label name at column {}", self.pos + 1));
                }
                self.skip_ws();
                self.expect('=')?;
                self.skip_ws();
                let value = self.quoted()?;
                if labels.insert(lname.to_string(), value).is_some() {
                    return Err(format!("duplicate label {lname:?}"));
                }
                self.skip_ws();
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some('}') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(format!("expected ',' or '}}' at column {}", self.pos + 1)),
                }
            }
        }
        Ok(SeriesKey { metric_name: name.to_string(), labels })
    }

    fn quoted(&mut self) -> Result<String, String> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            let c = self.peek().ok_or("unterminated label value")?;
            self.pos += c.len_utf8();
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let e = self.peek().ok_or("unterminated escape")?;
                    self.pos += e.len_utf8();
                    match e {
                        '\\' => out.push('\\'),
                        '"' => out.push('"'),
                        'n' => out.push('\n'),
                        o => return Err(format!("unknown escape \\{o}")),
                    }
                }
                c => out.push(c),
            }
        }
    }
}

/// A family together with its samples, for rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySamples {
    pub family: MetricFamily,
    pub samples: Vec<MetricSample>,
}

pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v == f64::INFINITY {
        "+Inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-Inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Render families as an exposition document. Timestamps are written only
/// when `with_timestamps` is set.
pub fn write_exposition(families: &[FamilySamples], with_timestamps: bool) -> String {
    let mut out = String::new();
    for fs in families {
        if let Some(help) = &fs.family.help {
            let escaped = help.replace('\\', "\\\\").replace('\n', "\\n");
            let _ = writeln!(out, "# HELP {} {}", fs.family.name, escaped);
        }
        let _ = writeln!(out, "# TYPE {} {}", fs.family.name, fs.family.kind.as_str());
        for s in &fs.samples {
            out.push_str(&s.series.metric_name);
            if !s.series.labels.is_empty() {
                out.push('{');
                for (i, (k, v)) in s.series.labels.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(k);
                    out.push_str("=\"");
                    escape_label_value(v, &mut out);
                    out.push('"');
                }
                out.push('}');
            }
            out.push(' ');
            out.push_str(&format_value(s.value));
            if with_timestamps {
                let _ = write!(out, " {}", s.timestamp);
            }
            out.push('\n');
        }
    }
    out
}
