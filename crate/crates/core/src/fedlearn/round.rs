//! One federated round driven entirely through the ledger.
//!
//! The opener publishes `open_round`; every peer reads the round's base
//! parameters from its own replica, trains, and publishes a `ModelUpdate`.
//! Sealing happens inside the contract on every replica, either when the last
//! expected update lands or in the first block stamped after the deadline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{local_train, ModelParams, TrainConfig, DEFAULT_HIDDEN};
use super::{FlError, LocalDataset, ModelUpdate, Normalization};
use crate::ledger::{Contract, FlRound, Network, OpenRound, RoundStatus};
use crate::Duration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub round: u64,
    pub train: TrainConfig,
    /// Time from `open_round` to the deadline.
    pub deadline_after: Duration,
    pub hidden: usize,
    pub init_seed: u64,
    /// Published with round 0 so every peer uses the same feature bounds.
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            round: 0,
            train: TrainConfig { epochs: 100, lr: 0.5 },
            deadline_after: Duration::from_secs(60),
            hidden: DEFAULT_HIDDEN,
            init_seed: 7,
            normalization: None,
        }
    }
}

/// A peer's local data; `silent` peers never publish, to model stragglers.
#[derive(Clone, Debug)]
pub struct Shard {
    pub peer: usize,
    pub data: LocalDataset,
    pub silent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u64,
    pub aggregate: ModelParams,
    pub included: Vec<String>,
    pub excluded: Vec<String>,
    #[serde(with = "super::f64_map")]
    pub local_losses: BTreeMap<String, f64>,
    #[serde(with = "super::f64_map")]
    pub initial_losses: BTreeMap<String, f64>,
    pub sealed_at: u64,
}

fn round_on(net: &Network, peer: usize, round: u64) -> Option<&FlRound> {
    net.peer(peer).state().fl_rounds.get(&round)
}

pub fn run_round(net: &mut Network, cfg: &RoundConfig, shards: &[Shard]) -> Result<RoundOutcome, FlError> {
    let r = cfg.round;
    let dim = shards.first().map(|s| s.data.dim()).ok_or(FlError::NoUpdates)?;
    if shards.iter().any(|s| s.data.dim() != dim) {
        return Err(FlError::DimensionMismatch { expected: dim, got: shards.iter().map(|s| s.data.dim()).find(|d| *d != dim).unwrap_or(0) });
    }
    let ledger = |e: crate::ledger::TxError| FlError::Ledger(e.to_string());
    let opener = net.peer_id(0).to_string();
    if round_on(net, 0, r).is_none() {
        let open = OpenRound {
            round: r,
            expected_peers: shards.iter().map(|s| net.peer_id(s.peer).to_string()).collect(),
            deadline: net.now() + cfg.deadline_after.as_millis_i64(),
            init_params: (r == 0).then(|| ModelParams::init(dim, cfg.hidden, cfg.init_seed)),
            normalization: if r == 0 { cfg.normalization.as_ref().map(|n| n.0.clone()) } else { None },
        };
        net.submit_as(0, &opener, Contract::FederatedLearning, "open_round", &open).map_err(ledger)?;
        net.settle();
    }
    let opened = round_on(net, 0, r).ok_or_else(|| FlError::Ledger(format!("round {r} was not opened")))?;
    let deadline = opened.deadline;

    // Each peer trains from the base parameters in its own replica.
    let jobs: Vec<(usize, String, ModelParams, &LocalDataset)> = shards
        .iter()
        .filter(|s| !s.silent)
        .map(|s| {
            let base = round_on(net, s.peer, r).map(|fr| fr.base_params.clone()).ok_or_else(|| FlError::Ledger(format!("round {r} missing on {}", net.peer_id(s.peer))))?;
            Ok((s.peer, net.peer_id(s.peer).to_string(), base, &s.data))
        })
        .collect::<Result<_, FlError>>()?;
    let results: Vec<Result<(usize, ModelUpdate, f64), FlError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(idx, id, base, data)| {
                let train = cfg.train;
                scope.spawn(move || {
                    let initial = super::model::loss(base, data)?;
                    let (params, train_loss) = local_train(base, data, train)?;
                    Ok((*idx, ModelUpdate { round: r, peer: id.clone(), params, sample_count: data.len() as u64, train_loss }, initial))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut initial_losses = BTreeMap::new();
    for res in results {
        let (idx, update, initial) = res?;
        initial_losses.insert(update.peer.clone(), initial);
        let peer = update.peer.clone();
        net.submit_as(idx, &peer, Contract::FederatedLearning, "publish_update", &update).map_err(ledger)?;
    }
    net.settle();

    if round_on(net, 0, r).map(|fr| fr.status) == Some(RoundStatus::Open) {
        net.advance_to(deadline + 1);
        net.heartbeat();
    }

    let sealed = round_on(net, 0, r).cloned().ok_or_else(|| FlError::Ledger(format!("round {r} vanished")))?;
    for i in 1..net.peers().len() {
        if round_on(net, i, r) != Some(&sealed) {
            return Err(FlError::Ledger(format!("round {r} differs on {}", net.peer_id(i))));
        }
    }
    match sealed.status {
        RoundStatus::Sealed => {}
        RoundStatus::Stalled => return Err(FlError::RoundStalled(r)),
        RoundStatus::Open => return Err(FlError::Ledger(format!("round {r} did not seal"))),
    }
    Ok(RoundOutcome {
        round: r,
        aggregate: sealed.aggregate.clone().expect("sealed rounds carry an aggregate"),
        included: sealed.updates.keys().cloned().collect(),
        excluded: sealed.excluded().into_iter().collect(),
        local_losses: sealed.updates.iter().map(|(k, u)| (k.clone(), u.update.train_loss)).collect(),
        initial_losses,
        sealed_at: sealed.sealed_at.unwrap_or_default(),
    })
}
