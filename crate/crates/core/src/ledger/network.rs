//! Discrete-event simulation of a fully connected peer network.
//!
//! Every message (tx gossip, block broadcast) is delivered after a fixed
//! one-way latency. Leaders propose on a fixed block interval. Peers only
//! interact through queued messages.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::Serialize;

use super::block::Block;
use super::peer::{leader_index, Peer, PeerConfig};
use super::tx::{Contract, Transaction};
use super::{LedgerError, TxError};
use crate::crypto::Hash32;
use crate::metrics::Timestamp;
use crate::Duration;

pub const MAX_PEERS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    pub peer_count: usize,
    pub latency: Duration,
    pub block_interval: Duration,
    pub peer: PeerConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            peer_count: 4,
            latency: Duration::from_millis(50),
            block_interval: Duration::from_millis(500),
            peer: PeerConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
enum Message {
    Tx(Transaction),
    Block(Block),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockTimeRow {
    pub height: u64,
    pub proposer: String,
    pub tx_count: usize,
    pub accept_latency_ms: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTimeReport {
    pub peer_count: usize,
    pub rows: Vec<BlockTimeRow>,
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// All peers hold the same chain and state hash.
    pub consistent: bool,
    pub state_hash: Hash32,
}

impl BlockTimeReport {
    fn from_rows(peer_count: usize, rows: Vec<BlockTimeRow>, consistent: bool, state_hash: Hash32) -> Self {
        let mut lat: Vec<f64> = rows.iter().map(|r| r.accept_latency_ms as f64).collect();
        lat.sort_by(f64::total_cmp);
        let mean_ms = if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 };
        // Nearest-rank percentile.
        let p95_ms = if lat.is_empty() { 0.0 } else { lat[((0.95 * lat.len() as f64).ceil() as usize).max(1) - 1] };
        BlockTimeReport { peer_count, rows, mean_ms, p95_ms, consistent, state_hash }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["height", "proposer", "tx_count", "accept_latency_ms"]).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

pub struct Network {
    config: NetworkConfig,
    peers: Vec<Peer>,
    queue: BinaryHeap<Reverse<(Timestamp, u64, usize)>>,
    messages: HashMap<u64, (usize, Message)>,
    seq: u64,
    now: Timestamp,
    next_tick: Timestamp,
    nonces: BTreeMap<String, u64>,
    first_gossip: HashMap<Hash32, Timestamp>,
    proposed_at: HashMap<u64, Timestamp>,
    accepted: BTreeMap<u64, (usize, Timestamp)>,
    rows: Vec<BlockTimeRow>,
}

impl Network {
    /// Start a network whose peers are `peer-0 .. peer-{n-1}`, all holding the same genesis.
    pub fn new(config: NetworkConfig, start: Timestamp) -> Result<Self, LedgerError> {
        if config.peer_count == 0 || config.peer_count > MAX_PEERS {
            return Err(LedgerError::PeerCount { got: config.peer_count, max: MAX_PEERS });
        }
        let roster: Vec<String> = (0..config.peer_count).map(|i| format!("peer-{i}")).collect();
        let mut peers = Vec::with_capacity(roster.len());
        for id in &roster {
            let mut p = Peer::new(id, roster.clone(), config.peer);
            p.bootstrap(start)?;
            peers.push(p);
        }
        let nonces = roster.iter().map(|id| (id.clone(), 0)).collect();
        Ok(Network {
            next_tick: start + config.block_interval.as_millis_i64(),
            config,
            peers,
            queue: BinaryHeap::new(),
            messages: HashMap::new(),
            seq: 0,
            now: start,
            nonces,
            first_gossip: HashMap::new(),
            proposed_at: HashMap::new(),
            accepted: BTreeMap::new(),
            rows: Vec::new(),
        })
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn peer(&self, i: usize) -> &Peer {
        &self.peers[i]
    }

    pub fn peer_id(&self, i: usize) -> &str {
        self.peers[i].id()
    }

    fn send(&mut self, to: usize, msg: Message) {
        let at = self.now + self.config.latency.as_millis_i64();
        self.seq += 1;
        self.messages.insert(self.seq, (to, msg));
        self.queue.push(Reverse((at, self.seq, to)));
    }

    fn broadcast(&mut self, from: usize, msg: Message) {
        for to in 0..self.peers.len() {
            if to != from {
                self.send(to, msg.clone());
            }
        }
    }

    /// Submit at peer `at`; on acceptance the tx is gossiped to all others.
    pub fn submit(&mut self, at: usize, tx: Transaction) -> Result<Hash32, TxError> {
        let id = tx.tx_id;
        self.peers[at].submit(tx.clone())?;
        if let Some(n) = self.nonces.get_mut(&tx.submitter) {
            *n = (*n).max(tx.nonce);
        } else {
            self.nonces.insert(tx.submitter.clone(), tx.nonce);
        }
        self.first_gossip.entry(id).or_insert(self.now);
        self.broadcast(at, Message::Tx(tx));
        Ok(id)
    }

    /// Submit as `submitter` through peer `at`, picking the next unused nonce.
    pub fn submit_as<T: Serialize>(
        &mut self,
        at: usize,
        submitter: &str,
        contract: Contract,
        action: &str,
        payload: &T,
    ) -> Result<Hash32, TxError> {
        let nonce = self.nonces.get(submitter).map(|n| n + 1).unwrap_or(1);
        self.submit(at, Transaction::with_payload(contract, action, payload, submitter, nonce))
    }

    /// Process every event up to and including time `t`.
    pub fn advance_to(&mut self, t: Timestamp) {
        loop {
            let next_msg = self.queue.peek().map(|Reverse((at, _, _))| *at);
            match next_msg {
                Some(at) if at <= t && at <= self.next_tick => self.deliver_next(),
                _ if self.next_tick <= t => self.tick(),
                _ => break,
            }
        }
        self.now = self.now.max(t);
    }

    fn deliver_next(&mut self) {
        let Reverse((at, seq, to)) = self.queue.pop().expect("peeked");
        self.now = at;
        let (_, msg) = self.messages.remove(&seq).expect("queued message");
        match msg {
            // Gossip races with inclusion; late copies are simply refused.
            Message::Tx(tx) => {
                let _ = self.peers[to].submit(tx);
            }
            Message::Block(b) => self.receive_block(to, b),
        }
    }

    fn receive_block(&mut self, to: usize, block: Block) {
        let height = block.height;
        if self.peers[to].accept_block(block.clone()).is_err() {
            return;
        }
        let entry = self.accepted.entry(height).or_insert((0, self.now));
        entry.0 += 1;
        entry.1 = self.now;
        if entry.0 == self.peers.len() {
            let start = block
                .txs
                .first()
                .and_then(|t| self.first_gossip.get(&t.tx_id).copied())
                .or_else(|| self.proposed_at.get(&height).copied())
                .unwrap_or(self.now);
            self.rows.push(BlockTimeRow {
                height,
                proposer: block.proposer.clone(),
                tx_count: block.txs.len(),
                accept_latency_ms: self.now - start,
            });
        }
    }

    /// Deliver in-flight messages, then have the next leader propose even if its mempool is empty.
    pub fn heartbeat(&mut self) {
        while matches!(self.queue.peek(), Some(Reverse((at, _, _))) if *at < self.next_tick) {
            self.deliver_next();
        }
        self.tick_with(true);
        self.settle();
    }

    fn tick(&mut self) {
        self.tick_with(false)
    }

    fn tick_with(&mut self, force: bool) {
        self.now = self.next_tick;
        self.next_tick += self.config.block_interval.as_millis_i64();
        let height = self.peers[0].next_height();
        let leader = leader_index(height, self.peers.len());
        if self.peers[leader].next_height() != height {
            return;
        }
        let proposal = if force {
            self.peers[leader].propose_heartbeat(self.now).map(Some)
        } else {
            self.peers[leader].propose(self.now)
        };
        if let Ok(Some(block)) = proposal {
            self.proposed_at.insert(block.height, self.now);
            self.receive_block(leader, block.clone());
            self.broadcast(leader, Message::Block(block));
        }
    }

    fn quiescent(&self) -> bool {
        self.queue.is_empty() && self.peers.iter().all(|p| p.mempool().is_empty())
    }

    /// Run until no messages are in flight and every mempool is empty.
    pub fn settle(&mut self) {
        let cap = self.now + 10_000 * self.config.block_interval.as_millis_i64();
        loop {
            while matches!(self.queue.peek(), Some(Reverse((at, _, _))) if *at < self.next_tick) {
                self.deliver_next();
            }
            if self.quiescent() || self.now >= cap {
                break;
            }
            self.tick();
        }
    }

    pub fn chains_identical(&self) -> bool {
        let first = &self.peers[0];
        self.peers.iter().all(|p| p.chain() == first.chain() && p.state().state_hash() == first.state().state_hash())
    }

    pub fn report(&self) -> BlockTimeReport {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.height);
        BlockTimeReport::from_rows(self.peers.len(), rows, self.chains_identical(), self.peers[0].state().state_hash())
    }
}

/// Drive `tx_rate` registry transactions per second for `duration`, then settle.
pub fn run_network(config: NetworkConfig, tx_rate: f64, duration: Duration) -> Result<BlockTimeReport, LedgerError> {
    let start = 0;
    let mut net = Network::new(config, start)?;
    let total = (tx_rate * duration.as_secs_f64()).round().max(0.0) as u64;
    for k in 0..total {
        let at = start + ((k as f64) * 1000.0 / tx_rate).round() as i64;
        net.advance_to(at);
        let peer = (k % config.peer_count as u64) as usize;
        let submitter = net.peer_id(peer).to_string();
        let payload = serde_json::json!({
            "name": format!("svc-{k}"),
            "metrics_endpoint": format!("http://svc-{k}:9100/metrics"),
        });
        net.submit_as(peer, &submitter, Contract::ServiceRegistry, "register", &payload)
            .expect("generated transactions are unique");
    }
    net.settle();
    Ok(net.report())
}
