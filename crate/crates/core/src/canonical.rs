//! Canonical textual encoding shared by ledger payloads, tokens and export files.
//!
//! Objects are written with keys in byte-wise sorted order, no insignificant
//! whitespace, UTF-8, and floats in shortest round-trip decimal form.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("value cannot be canonically encoded: {0}")]
    Encode(#[source] serde_json::Error),
    #[error("malformed canonical text: {0}")]
    Decode(#[source] serde_json::Error),
}

/// Encode any serializable value canonically.
///
/// Going through [`Value`] sorts object keys (its map type is ordered by key).
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v = serde_json::to_value(value).map_err(CanonicalError::Encode)?;
    value_to_vec(&v)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    // the encoder only emits UTF-8
    Ok(String::from_utf8(to_vec(value)?).expect("canonical encoding is UTF-8"))
}

/// Encode an already-built [`Value`].
///
/// Non-finite floats have no textual form; serde_json turns them into `null`
/// during `to_value`, so callers must keep them out of encoded records.
pub fn value_to_vec(v: &Value) -> Result<Vec<u8>, CanonicalError> {
    serde_json::to_vec(v).map_err(CanonicalError::Encode)
}

pub fn from_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    serde_json::from_slice(bytes).map_err(CanonicalError::Decode)
}

/// Format an `f64` with 17 significant digits, enough to round-trip exactly.
pub fn f64_17(x: f64) -> String {
    format!("{:.16e}", x)
}

pub fn parse_f64_17(s: &str) -> Option<f64> {
    s.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_no_whitespace() {
        let v = json!({"b": 1, "a": [1.5, "x"], "c": {"z": true, "y": null}});
        assert_eq!(to_string(&v).unwrap(), r#"{"a":[1.5,"x"],"b":1,"c":{"y":null,"z":true}}"#);
    }

    #[test]
    fn floats_shortest_round_trip() {
        assert_eq!(to_string(&0.1f64).unwrap(), "0.1");
        assert_eq!(to_string(&0.99f64).unwrap(), "0.99");
    }

    #[test]
    fn f64_17_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(parse_f64_17(&f64_17(x)).unwrap().to_bits(), x.to_bits());
        }
    }
}
