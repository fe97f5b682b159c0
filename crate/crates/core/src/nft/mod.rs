//! s-528 tokens for SLI and SLO records.
//!
//! A token wraps the canonical encoding of an SLI or SLO record together with provenance.
//! Minting goes through the ledger's `nft` contract; verification and audit
//! work from a chain alone. The byte layout and a test vector are in
//! `docs/s528.md`.
//!
//! ```
//! use slokit::nft::{compute_token_id, TokenKind};
//!
//! let id = compute_token_id("s-528", TokenKind::Slo, "vault", "{}", 1);
//! assert_eq!(id.to_hex().len(), 64);
//! ```

mod token;


pub use token::{compute_token_id, encode_s528, Provenance, S528Token, TokenKind, Tokenizable, SCHEMA};

use serde::{Deserialize, Serialize};

use crate::crypto::Hash32;
use crate::ledger::{Block, Contract, ContractState, Network, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NftError {
    #[error("token {0} not found on chain")]
    NotFound(Hash32),
    #[error("hash mismatch: recomputed {expected}, stored {got}")]
    HashMismatch { expected: Hash32, got: Hash32 },
    #[error("chain broken at height {height}: {reason}")]
    ChainBroken { height: u64, reason: String },
    #[error("token {0} already minted")]
    DuplicateToken(Hash32),
    #[error("issuer {0} is not a registered identity")]
    UnknownIssuer(String),
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("ledger: {0}")]
    Ledger(String),
}

impl NftError {
    /// Variant name, for terse machine-readable reporting.
    pub fn code(&self) -> &'static str {
        match self {
            NftError::NotFound(_) => "NotFound",
            NftError::HashMismatch { .. } => "HashMismatch",
            NftError::ChainBroken { .. } => "ChainBroken",
            NftError::DuplicateToken(_) => "DuplicateToken",
            NftError::UnknownIssuer(_) => "UnknownIssuer",
            NftError::Malformed(_) => "Malformed",
            NftError::Ledger(_) => "Ledger",
        }
    }
}

/// Submit a mint through `peer`. The token is queryable once the next block lands.
pub fn mint(net: &mut Network, peer: usize, token: &S528Token) -> Result<Hash32, NftError> {
    token.check()?;
    let p = net.peer(peer);
    let issuer = &token.provenance.issuer;
    if !p.state().is_active_identity(issuer) {
        return Err(NftError::UnknownIssuer(issuer.clone()));
    }
    let pending = p.mempool().iter().any(|tx| {
        tx.contract == Contract::Nft
            && tx.action == "mint"
            && crate::canonical::from_slice::<S528Token>(&tx.payload).map(|t| t.token_id == token.token_id).unwrap_or(false)
    });
    if pending || p.state().tokens.contains_key(&token.token_id) {
        return Err(NftError::DuplicateToken(token.token_id));
    }
    let issuer = issuer.clone();
    net.submit_as(peer, &issuer, Contract::Nft, "mint", token).map_err(|e| NftError::Ledger(e.to_string()))
}

/// Version the next token for `service/kind/name` should carry.
pub fn next_version(state: &ContractState, service: &str, kind: TokenKind, name: &str) -> u32 {
    state.token_versions.get(&format!("{service}/{kind}/{name}")).copied().unwrap_or(0) + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verified {
    pub token: S528Token,
    pub block_height: u64,
    pub tx_id: Hash32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub token_id: Hash32,
    pub block_height: u64,
    pub tx_id: Hash32,
    pub current_owner: String,
    pub kind: TokenKind,
    pub version: u32,
}

/// Heights, linkage, block hashes and tx ids from genesis to head.
pub fn check_chain(chain: &[Block]) -> Result<(), NftError> {
    let mut prev = Hash32::ZERO;
    for (i, b) in chain.iter().enumerate() {
        if b.height != i as u64 {
            return Err(NftError::ChainBroken { height: b.height, reason: format!("expected height {i}") });
        }
        if b.prev_hash != prev {
            return Err(NftError::ChainBroken { height: b.height, reason: "prev_hash does not link to parent".into() });
        }
        for tx in &b.txs {
            let id = tx.compute_id();
            if id != tx.tx_id {
                return Err(NftError::HashMismatch { expected: id, got: tx.tx_id });
            }
        }
        if b.compute_hash() != b.block_hash {
            return Err(NftError::ChainBroken { height: b.height, reason: "block_hash does not match contents".into() });
        }
        prev = b.block_hash;
    }
    Ok(())
}

pub fn verify(token_id: &Hash32, chain: &[Block]) -> Result<Verified, NftError> {
    check_chain(chain)?;
    let state = ContractState::replay(chain);
    let rec = state.tokens.get(token_id).ok_or(NftError::NotFound(*token_id))?;
    let block = &chain[rec.minted_at as usize];
    let tx = block.txs.iter().find(|t| t.tx_id == rec.mint_tx).ok_or(NftError::NotFound(*token_id))?;
    let token: S528Token = crate::canonical::from_slice(&tx.payload).map_err(|e| NftError::Malformed(e.to_string()))?;
    let recomputed = token.compute_id();
    if recomputed != *token_id {
        return Err(NftError::HashMismatch { expected: recomputed, got: *token_id });
    }
    Ok(Verified { token, block_height: block.height, tx_id: tx.tx_id })
}

/// Every successful mint for `service`, oldest first, with the current owner.
pub fn audit_query(chain: &[Block], service: &str) -> Vec<AuditRecord> {
    let state = ContractState::replay(chain);
    let mut out: Vec<(u64, usize, AuditRecord)> = state
        .tokens
        .values()
        .filter(|r| r.token.service == service)
        .map(|r| {
            let index = state.receipts.get(&r.mint_tx).map(|rc| rc.index).unwrap_or(0);
            debug_assert_eq!(state.receipts.get(&r.mint_tx).map(|rc| &rc.outcome), Some(&Outcome::Applied));
            (
                r.minted_at,
                index,
                AuditRecord {
                    token_id: r.token.token_id,
                    block_height: r.minted_at,
                    tx_id: r.mint_tx,
                    current_owner: r.owner.clone(),
                    kind: r.token.kind,
                    version: r.token.version,
                },
            )
        })
        .collect();
    out.sort_by_key(|(h, i, _)| (*h, *i));
    out.into_iter().map(|(_, _, r)| r).collect()
}
