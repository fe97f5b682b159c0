//! Append-only hash-chained ledger.
//!
//! Peers run a round-robin leader schedule (`height % peer_count`) and validate
//! every block in full before appending it. Contract state is derived purely by
//! replaying blocks, so two peers holding the same chain always agree on
//! [`ContractState::state_hash`].
//!
//! ```
//! use slokit::ledger::{Contract, Peer, PeerConfig, Transaction};
//!
//! let roster = vec!["peer-0".to_string()];
//! let mut peer = Peer::new("peer-0", roster, PeerConfig::default());
//! peer.bootstrap(0).unwrap();
//! let tx = Transaction::with_payload(
//!     Contract::ServiceRegistry,
//!     "register",
//!     &serde_json::json!({"name": "vault", "metrics_endpoint": "http://vault:8200/metrics"}),
//!     "peer-0",
//!     1,
//! );
//! peer.submit(tx).unwrap();
//! let block = peer.propose(1_000).unwrap().unwrap();
//! peer.accept_block(block).unwrap();
//! assert_eq!(peer.state().services["vault"].metrics_endpoint, "http://vault:8200/metrics");
//! ```

mod block;
mod dump;
mod network;
mod peer;
mod state;
mod tx;

#[cfg(test)]
mod tests;

pub use block::Block;
pub use dump::{read_chain_dump, write_chain_dump};
pub use network::{run_network, BlockTimeReport, BlockTimeRow, Network, NetworkConfig, MAX_PEERS};
pub use peer::{leader_index, Peer, PeerConfig};
pub use state::{
    ContractState, FlRound, IdentityRecord, OpenRound, Outcome, Receipt, RoundStatus, SealRound, ServiceRecord,
    SloRecord, TokenRecord, TransferToken, UpdateRecord,
};
pub use tx::{Contract, Transaction};

use crate::crypto::Hash32;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TxError {
    #[error("tx_id {0} does not match its contents")]
    BadHash(Hash32),
    #[error("transaction {0} already seen")]
    Duplicate(Hash32),
    #[error("nonce {nonce} already used by {submitter}")]
    DuplicateNonce { submitter: String, nonce: u64 },
    #[error("unknown contract {0:?}")]
    UnknownContract(String),
    #[error("submitter {0} is not a registered identity")]
    UnknownSubmitter(String),
}

/// One reason a block failed validation.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BlockFault {
    #[error("expected height {expected}, got {got}")]
    HeightGap { expected: u64, got: u64 },
    #[error("prev_hash {got} does not link to {expected}")]
    PrevHashMismatch { expected: Hash32, got: Hash32 },
    #[error("block_hash {got} does not match recomputed {expected}")]
    HashMismatch { expected: Hash32, got: Hash32 },
    #[error("proposer {got} is not the scheduled leader {expected}")]
    WrongLeader { expected: String, got: String },
    #[error("timestamp {got} precedes parent timestamp {parent}")]
    TimestampRegression { parent: i64, got: i64 },
    #[error("transaction {index}: {error}")]
    InvalidTx { index: usize, error: TxError },
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("{peer} is not the leader for height {height} (expected {expected})")]
    NotLeader { height: u64, expected: String, peer: String },
    #[error("block {height} rejected: {}", .faults.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Rejected { height: u64, faults: Vec<BlockFault> },
    #[error("peer count must be between 1 and {max}, got {got}")]
    PeerCount { got: usize, max: usize },
    #[error("chain dump line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
