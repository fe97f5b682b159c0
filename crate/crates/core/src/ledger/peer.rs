use super::block::Block;
use super::state::ContractState;
use super::tx::{Contract, Transaction};
use super::{BlockFault, LedgerError, TxError};
use crate::crypto::Hash32;
use crate::metrics::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeerConfig {
    pub max_block_txs: usize,
    /// Propose empty blocks when the mempool is empty.
    pub heartbeat: bool,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig { max_block_txs: 100, heartbeat: false }
    }
}

/// Round-robin schedule: the leader for `height` is roster entry `height % n`.
pub fn leader_index(height: u64, peer_count: usize) -> usize {
    (height % peer_count as u64) as usize
}

/// Genesis registers every roster member as an identity.
pub fn genesis_block(roster: &[String], timestamp: Timestamp) -> Block {
    let txs = roster
        .iter()
        .map(|id| Transaction::with_payload(Contract::Identity, "register", &serde_json::json!({ "id": id }), id, 0))
        .collect();
    Block::genesis(&roster[0], timestamp, txs)
}

#[derive(Clone, Debug)]
pub struct Peer {
    id: String,
    roster: Vec<String>,
    config: PeerConfig,
    chain: Vec<Block>,
    mempool: Vec<Transaction>,
    state: ContractState,
}

impl Peer {
    pub fn new(id: &str, roster: Vec<String>, config: PeerConfig) -> Self {
        assert!(!roster.is_empty(), "roster must not be empty");
        Peer { id: id.to_string(), roster, config, chain: Vec::new(), mempool: Vec::new(), state: ContractState::default() }
    }

    /// Accept the shared genesis block.
    pub fn bootstrap(&mut self, timestamp: Timestamp) -> Result<(), LedgerError> {
        let g = genesis_block(&self.roster, timestamp);
        self.accept_block(g)
    }

    /// Rebuild a peer from a full chain, validating every block.
    pub fn replay(id: &str, roster: Vec<String>, config: PeerConfig, blocks: impl IntoIterator<Item = Block>) -> Result<Self, LedgerError> {
        let mut p = Peer::new(id, roster, config);
        for b in blocks {
            p.accept_block(b)?;
        }
        Ok(p)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn next_height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn leader_for(&self, height: u64) -> &str {
        &self.roster[leader_index(height, self.roster.len())]
    }

    pub fn is_leader(&self) -> bool {
        self.leader_for(self.next_height()) == self.id
    }

    /// Admit a transaction to the mempool.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), TxError> {
        if !tx.id_is_valid() {
            return Err(TxError::BadHash(tx.tx_id));
        }
        if self.state.receipts.contains_key(&tx.tx_id) || self.mempool.iter().any(|m| m.tx_id == tx.tx_id) {
            return Err(TxError::Duplicate(tx.tx_id));
        }
        let key = (tx.submitter.clone(), tx.nonce);
        if self.state.used_nonces.contains(&key) || self.mempool.iter().any(|m| m.submitter == tx.submitter && m.nonce == tx.nonce) {
            return Err(TxError::DuplicateNonce { submitter: tx.submitter, nonce: tx.nonce });
        }
        self.mempool.push(tx);
        Ok(())
    }

    /// Build the next block if this peer is the scheduled leader.
    ///
    /// Transactions are taken in submission order; ones that would fail
    /// validation against the evolving state are dropped from the mempool.
    pub fn propose(&mut self, now: Timestamp) -> Result<Option<Block>, LedgerError> {
        self.propose_inner(now, self.config.heartbeat)
    }

    /// Like [`Peer::propose`] but always yields a block, empty if need be.
    pub fn propose_heartbeat(&mut self, now: Timestamp) -> Result<Block, LedgerError> {
        Ok(self.propose_inner(now, true)?.expect("heartbeat proposals always yield a block"))
    }

    fn propose_inner(&mut self, now: Timestamp, allow_empty: bool) -> Result<Option<Block>, LedgerError> {
        let height = self.next_height();
        let expected = self.leader_for(height).to_string();
        if expected != self.id {
            return Err(LedgerError::NotLeader { height, expected, peer: self.id.clone() });
        }
        let mut scratch = self.state.clone();
        let mut picked = Vec::new();
        let mut dropped = Vec::new();
        for tx in &self.mempool {
            if picked.len() == self.config.max_block_txs {
                break;
            }
            match scratch.check_tx(tx) {
                Ok(()) => {
                    // Apply one-tx probe so later txs see earlier registrations.
                    let probe = Block::new(height, self.head_hash(), now, &self.id, vec![tx.clone()]);
                    scratch.apply_block(&probe);
                    picked.push(tx.clone());
                }
                Err(_) => dropped.push(tx.tx_id),
            }
        }
        self.mempool.retain(|t| !dropped.contains(&t.tx_id));
        if picked.is_empty() && !allow_empty {
            return Ok(None);
        }
        let ts = now.max(self.chain.last().map(|b| b.timestamp).unwrap_or(now));
        Ok(Some(Block::new(height, self.head_hash(), ts, &self.id, picked)))
    }

    fn head_hash(&self) -> Hash32 {
        self.chain.last().map(|b| b.block_hash).unwrap_or(Hash32::ZERO)
    }

    pub fn validate_block(&self, block: &Block) -> Result<(), Vec<BlockFault>> {
        let mut faults = Vec::new();
        let expected_height = self.next_height();
        if block.height != expected_height {
            faults.push(BlockFault::HeightGap { expected: expected_height, got: block.height });
        }
        let head = self.head_hash();
        if block.prev_hash != head {
            faults.push(BlockFault::PrevHashMismatch { expected: head, got: block.prev_hash });
        }
        let recomputed = block.compute_hash();
        if recomputed != block.block_hash {
            faults.push(BlockFault::HashMismatch { expected: recomputed, got: block.block_hash });
        }
        let leader = self.leader_for(block.height);
        if block.proposer != leader {
            faults.push(BlockFault::WrongLeader { expected: leader.to_string(), got: block.proposer.clone() });
        }
        if let Some(parent) = self.chain.last() {
            if block.timestamp < parent.timestamp {
                faults.push(BlockFault::TimestampRegression { parent: parent.timestamp, got: block.timestamp });
            }
        }
        let mut scratch = self.state.clone();
        for (index, tx) in block.txs.iter().enumerate() {
            match scratch.check_tx(tx) {
                Ok(()) => {
                    let probe = Block { txs: vec![tx.clone()], ..block.clone() };
                    scratch.apply_block(&probe);
                }
                Err(error) => faults.push(BlockFault::InvalidTx { index, error }),
            }
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(faults)
        }
    }

    /// Validate, apply and append a block; the mempool loses every included tx.
    pub fn accept_block(&mut self, block: Block) -> Result<(), LedgerError> {
        self.validate_block(&block).map_err(|faults| LedgerError::Rejected { height: block.height, faults })?;
        self.state.apply_block(&block);
        let state = &self.state;
        self.mempool.retain(|t| !state.receipts.contains_key(&t.tx_id) && !state.used_nonces.contains(&(t.submitter.clone(), t.nonce)));
        self.chain.push(block);
        Ok(())
    }
}
