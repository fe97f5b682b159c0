//! Block-acceptance latency across peer counts.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::crypto::Hash32;
use crate::ledger::{run_network, BlockTimeReport, NetworkConfig, PeerConfig};
use crate::Duration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub peer_counts: Vec<usize>,
    pub latency_ms: u64,
    pub block_interval_ms: u64,
    pub max_block_txs: usize,
    pub tx_rate: f64,
    pub duration: Duration,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            peer_counts: (1..=7).collect(),
            latency_ms: 50,
            block_interval_ms: 500,
            max_block_txs: 100,
            tx_rate: 20.0,
            duration: Duration::from_secs(30),
        }
    }
}

/// One line of the summary CSV. Columns: `peer_count`, `latency_ms`, `blocks`,
/// `txs`, `mean_accept_ms`, `p95_accept_ms`, `consistent`, `state_hash`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub peer_count: usize,
    pub latency_ms: u64,
    pub blocks: usize,
    pub txs: usize,
    pub mean_accept_ms: f64,
    pub p95_accept_ms: f64,
    pub consistent: bool,
    pub state_hash: Hash32,
}

impl BenchRow {
    fn from_report(r: &BlockTimeReport, latency_ms: u64) -> Self {
        BenchRow {
            peer_count: r.peer_count,
            latency_ms,
            blocks: r.rows.len(),
            txs: r.rows.iter().map(|x| x.tx_count).sum(),
            mean_accept_ms: r.mean_ms,
            p95_accept_ms: r.p95_ms,
            consistent: r.consistent,
            state_hash: r.state_hash,
        }
    }
}

/// Summary rows plus each run's per-block report.
pub fn bench_ledger(s: &BenchSettings) -> Result<Vec<(BenchRow, BlockTimeReport)>, HarnessError> {
    s.peer_counts
        .iter()
        .map(|&n| {
            let cfg = NetworkConfig {
                peer_count: n,
                latency: Duration::from_millis(s.latency_ms),
                block_interval: Duration::from_millis(s.block_interval_ms),
                peer: PeerConfig { max_block_txs: s.max_block_txs, ..PeerConfig::default() },
            };
            let r = run_network(cfg, s.tx_rate, s.duration)?;
            Ok((BenchRow::from_report(&r, s.latency_ms), r))
        })
        .collect()
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
