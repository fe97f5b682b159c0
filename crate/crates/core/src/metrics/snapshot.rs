//! Append-only snapshot file.
//!
//! Layout: the 8-byte magic `SLKSNAP1`, then records of
//!
//! ```text
//! u32 LE  record length N (bytes after this field)
//! u32 LE  key length K
//! K bytes canonical series key, UTF-8 (`name{a="x",...}`)
//! i64 LE  timestamp, ms since epoch
//! u64 LE  IEEE-754 bits of the value
//! ```
//!
//! so `N = 4 + K + 16`.

use std::io::{Read, Write};
use std::path::Path;

use super::exposition::parse_series_key;
use super::series::MetricSample;
use super::MetricsError;

pub const MAGIC: &[u8; 8] = b"SLKSNAP1";

pub fn write_header<W: Write>(w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)
}

pub fn write_record<W: Write>(w: &mut W, s: &MetricSample) -> std::io::Result<()> {
    let key = s.series.canonical();
    let k = key.len() as u32;
    w.write_all(&(4 + k + 16).to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    w.write_all(key.as_bytes())?;
    w.write_all(&s.timestamp.to_le_bytes())?;
    w.write_all(&s.value.to_bits().to_le_bytes())
}

pub fn encode(samples: &[MetricSample]) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out).expect("vec write");
    for s in samples {
        write_record(&mut out, s).expect("vec write");
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<MetricSample>, MetricsError> {
    let bad = |msg: &str| MetricsError::Snapshot(msg.to_string());
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(bad("missing SLKSNAP1 header"));
    }
    let mut pos = 8;
    let mut out = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], MetricsError> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| bad("truncated record"))?;
        *pos += n;
        Ok(s)
    };
    while pos < bytes.len() {
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let record = take(&mut pos, n)?;
        if n < 20 {
            return Err(bad("record too short"));
        }
        let k = u32::from_le_bytes(record[..4].try_into().unwrap()) as usize;
        if 4 + k + 16 != n {
            return Err(bad("record length mismatch"));
        }
        let key = std::str::from_utf8(&record[4..4 + k]).map_err(|_| bad("key is not UTF-8"))?;
        let series = parse_series_key(key).map_err(|e| MetricsError::Snapshot(format!("bad key {key:?}: {e}")))?;
        let ts = i64::from_le_bytes(record[4 + k..12 + k].try_into().unwrap());
        let bits = u64::from_le_bytes(record[12 + k..20 + k].try_into().unwrap());
        out.push(MetricSample::new(series, ts, f64::from_bits(bits)));
    }
    Ok(out)
}

pub fn read_snapshot(path: &Path) -> Result<Vec<MetricSample>, MetricsError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SeriesKey;

    #[test]
    fn byte_layout() {
        let s = MetricSample::new(SeriesKey::new("up", [("a", "b")]).unwrap(), 1, 2.0);
        let bytes = encode(&[s.clone()]);
        let key = br#"up{a="b"}"#;
        let mut expected = MAGIC.to_vec();
        expected.extend(((4 + key.len() + 16) as u32).to_le_bytes());
        expected.extend((key.len() as u32).to_le_bytes());
        expected.extend(key);
        expected.extend(1i64.to_le_bytes());
        expected.extend(2.0f64.to_bits().to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap(), vec![s]);
    }

    #[test]
    fn truncated_is_error() {
        let s = MetricSample::new(SeriesKey::metric("up").unwrap(), 1, 2.0);
        let bytes = encode(&[s]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"nope").is_err());
    }
}
