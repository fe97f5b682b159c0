use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::NftError;
use crate::crypto::{FieldHasher, Hash32};
use crate::metrics::Timestamp;
use crate::slogen::{SliSpec, SloSpec};

pub const SCHEMA: &str = "s-528";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Sli,
    Slo,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Sli => "sli",
            TokenKind::Slo => "slo",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub fl_round: u64,
    pub backend: String,
    pub created_at: Timestamp,
    pub issuer: String,
}

/// An SLI or SLO record as an s-528 token.
///
/// `payload` is the canonical encoding of the SLI or SLO record, kept as text so the
/// exact hashed bytes survive any re-encoding of the token itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct S528Token {
    pub schema: String,
    pub token_id: Hash32,
    pub kind: TokenKind,
    pub service: String,
    pub payload: String,
    pub provenance: Provenance,
    pub version: u32,
}

/// Object that can be tokenized.
pub enum Tokenizable<'a> {
    Sli(&'a SliSpec),
    Slo(&'a SloSpec),
}

impl Tokenizable<'_> {
    fn kind(&self) -> TokenKind {
        match self {
            Tokenizable::Sli(_) => TokenKind::Sli,
            Tokenizable::Slo(_) => TokenKind::Slo,
        }
    }

    fn service(&self) -> &str {
        match self {
            Tokenizable::Sli(s) => &s.service,
            Tokenizable::Slo(s) => &s.sli.service,
        }
    }

    fn payload(&self) -> String {
        match self {
            Tokenizable::Sli(s) => crate::canonical::to_string(s),
            Tokenizable::Slo(s) => crate::canonical::to_string(s),
        }
        .expect("specs serialize")
    }
}

/// `SHA-256(schema ‖ kind ‖ service ‖ payload ‖ version)` with length-prefixed fields.
pub fn compute_token_id(schema: &str, kind: TokenKind, service: &str, payload: &str, version: u32) -> Hash32 {
    let mut h = FieldHasher::new();
    h.str(schema).str(&kind.to_string()).str(service).str(payload).u64(version as u64);
    h.finish()
}

pub fn encode_s528(obj: Tokenizable<'_>, provenance: Provenance, version: u32) -> S528Token {
    let payload = obj.payload();
    let kind = obj.kind();
    let service = obj.service().to_string();
    S528Token {
        schema: SCHEMA.to_string(),
        token_id: compute_token_id(SCHEMA, kind, &service, &payload, version),
        kind,
        service,
        payload,
        provenance,
        version,
    }
}

impl S528Token {
    pub fn compute_id(&self) -> Hash32 {
        compute_token_id(&self.schema, self.kind, &self.service, &self.payload, self.version)
    }

    /// Schema, version and id consistency.
    pub fn check(&self) -> Result<(), NftError> {
        if self.schema != SCHEMA {
            return Err(NftError::Malformed(format!("schema {:?} is not {SCHEMA}", self.schema)));
        }
        if self.version == 0 {
            return Err(NftError::Malformed("version starts at 1".into()));
        }
        let id = self.compute_id();
        if id != self.token_id {
            return Err(NftError::HashMismatch { expected: id, got: self.token_id });
        }
        Ok(())
    }

    /// `service/kind/name`: tokens with the same subject form a version history.
    pub fn subject(&self) -> Result<String, NftError> {
        let v: Value = serde_json::from_str(&self.payload).map_err(|e| NftError::Malformed(format!("payload: {e}")))?;
        let name = match self.kind {
            TokenKind::Sli => v.pointer("/name"),
            TokenKind::Slo => v.pointer("/sli/name"),
        }
        .and_then(Value::as_str)
        .ok_or_else(|| NftError::Malformed("payload lacks an SLI name".into()))?;
        Ok(format!("{}/{}/{}", self.service, self.kind, name))
    }

    pub fn slo(&self) -> Option<SloSpec> {
        (self.kind == TokenKind::Slo).then(|| serde_json::from_str(&self.payload).ok()).flatten()
    }
}
