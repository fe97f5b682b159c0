use serde::{Deserialize, Serialize};

use super::tx::Transaction;
use crate::crypto::{FieldHasher, Hash32};
use crate::metrics::Timestamp;

/// A hash-linked batch of transactions.
///
/// `block_hash` is SHA-256 over the framed fields
/// `height ‖ prev_hash ‖ timestamp ‖ proposer ‖ tx_id_1 ‖ … ‖ tx_id_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub timestamp: Timestamp,
    pub proposer: String,
    pub txs: Vec<Transaction>,
    pub block_hash: Hash32,
}

impl Block {
    pub fn new(height: u64, prev_hash: Hash32, timestamp: Timestamp, proposer: &str, txs: Vec<Transaction>) -> Self {
        let mut b = Block { height, prev_hash, timestamp, proposer: proposer.to_string(), txs, block_hash: Hash32::ZERO };
        b.block_hash = b.compute_hash();
        b
    }

    pub fn genesis(proposer: &str, timestamp: Timestamp, txs: Vec<Transaction>) -> Self {
        Self::new(0, Hash32::ZERO, timestamp, proposer, txs)
    }

    pub fn compute_hash(&self) -> Hash32 {
        let mut h = FieldHasher::new();
        h.u64(self.height).hash(&self.prev_hash).i64(self.timestamp).str(&self.proposer);
        for tx in &self.txs {
            h.hash(&tx.tx_id);
        }
        h.finish()
    }
}
