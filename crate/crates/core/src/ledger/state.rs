//! Contract state and the five contract handlers.
//!
//! State is a pure function of the block sequence: [`ContractState::apply_block`]
//! is the only mutator. A handler that rejects a transaction records the
//! error in the receipt table and leaves every other part of the state alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::block::Block;
use super::tx::{Contract, Transaction};
use super::TxError;
use crate::crypto::Hash32;
use crate::fedlearn::{aggregate, ModelParams, ModelUpdate};
use crate::metrics::Timestamp;
use crate::nft::S528Token;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: String,
    pub active: bool,
    pub registered_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub name: String,
    pub metrics_endpoint: String,
    #[serde(default)]
    pub container: Option<String>,
    #[serde(default)]
    pub deployment: Option<String>,
    #[serde(default)]
    pub owner: String,
    #[serde(default)]
    pub updated_at: u64,
}

/// Payload of `federated_learning/open_round`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenRound {
    pub round: u64,
    pub expected_peers: Vec<String>,
    pub deadline: Timestamp,
    /// Required for round 0; later rounds start from the previous aggregate.
    #[serde(default)]
    pub init_params: Option<ModelParams>,
    /// Per-feature `(min, max)` bounds shared by every peer.
    #[serde(default)]
    pub normalization: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SealRound {
    pub round: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    Sealed,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub height: u64,
    pub tx_id: Hash32,
    pub update: ModelUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlRound {
    pub round: u64,
    pub expected_peers: BTreeSet<String>,
    pub deadline: Timestamp,
    pub base_params: ModelParams,
    pub normalization: Option<Vec<(f64, f64)>>,
    pub updates: BTreeMap<String, UpdateRecord>,
    pub status: RoundStatus,
    pub aggregate: Option<ModelParams>,
    pub sealed_at: Option<u64>,
}

impl FlRound {
    /// Peers whose update never made it on chain before sealing.
    pub fn excluded(&self) -> BTreeSet<String> {
        self.expected_peers.iter().filter(|p| !self.updates.contains_key(*p)).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloRecord {
    pub height: u64,
    pub tx_id: Hash32,
    pub submitter: String,
    pub service: String,
    pub record: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: S528Token,
    pub owner: String,
    pub minted_at: u64,
    pub mint_tx: Hash32,
    /// `(height, tx_id, new_owner)` for every transfer.
    pub transfers: Vec<(u64, Hash32, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferToken {
    pub token_id: Hash32,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Applied,
    AppliedWithError(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub height: u64,
    pub index: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    pub height: Option<u64>,
    pub head: Hash32,
    pub identities: BTreeMap<String, IdentityRecord>,
    pub services: BTreeMap<String, ServiceRecord>,
    pub fl_rounds: BTreeMap<u64, FlRound>,
    pub slo_records: Vec<SloRecord>,
    pub tokens: BTreeMap<Hash32, TokenRecord>,
    /// Latest token version per `service/kind/name` subject.
    pub token_versions: BTreeMap<String, u32>,
    pub used_nonces: BTreeSet<(String, u64)>,
    pub receipts: BTreeMap<Hash32, Receipt>,
}

#[derive(Deserialize)]
struct IdPayload {
    id: String,
}

impl ContractState {
    /// SHA-256 of the canonical encoding of the whole state.
    pub fn state_hash(&self) -> Hash32 {
        Hash32::digest(&crate::canonical::to_vec(self).expect("state is serializable"))
    }

    pub fn is_active_identity(&self, id: &str) -> bool {
        self.identities.get(id).map(|r| r.active).unwrap_or(false)
    }

    /// Structural validity of a transaction against this state.
    pub fn check_tx(&self, tx: &Transaction) -> Result<(), TxError> {
        if !tx.id_is_valid() {
            return Err(TxError::BadHash(tx.tx_id));
        }
        if self.receipts.contains_key(&tx.tx_id) {
            return Err(TxError::Duplicate(tx.tx_id));
        }
        if self.used_nonces.contains(&(tx.submitter.clone(), tx.nonce)) {
            return Err(TxError::DuplicateNonce { submitter: tx.submitter.clone(), nonce: tx.nonce });
        }
        let self_registration = tx.contract == Contract::Identity
            && tx.action == "register"
            && crate::canonical::from_slice::<IdPayload>(&tx.payload).map(|p| p.id == tx.submitter).unwrap_or(false);
        if !self_registration && !self.is_active_identity(&tx.submitter) {
            return Err(TxError::UnknownSubmitter(tx.submitter.clone()));
        }
        Ok(())
    }

    /// Fold blocks into a fresh state without validating them.
    pub fn replay<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Self {
        let mut s = ContractState::default();
        for b in blocks {
            s.apply_block(b);
        }
        s
    }

    /// Apply a block that already passed validation.
    pub fn apply_block(&mut self, block: &Block) {
        self.seal_expired_rounds(block);
        for (index, tx) in block.txs.iter().enumerate() {
            let outcome = match self.dispatch(block, tx) {
                Ok(()) => Outcome::Applied,
                Err(e) => Outcome::AppliedWithError(e),
            };
            self.used_nonces.insert((tx.submitter.clone(), tx.nonce));
            self.receipts.insert(tx.tx_id, Receipt { height: block.height, index, outcome });
        }
        self.height = Some(block.height);
        self.head = block.block_hash;
    }

    fn seal_expired_rounds(&mut self, block: &Block) {
        for round in self.fl_rounds.values_mut() {
            if round.status == RoundStatus::Open && block.timestamp > round.deadline {
                seal(round, block.height);
            }
        }
    }

    fn dispatch(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        // Handlers work on a scratch copy so a failing handler cannot leave partial writes.
        let mut scratch = self.clone();
        let r = match tx.contract {
            Contract::Identity => scratch.identity(block, tx),
            Contract::ServiceRegistry => scratch.service_registry(block, tx),
            Contract::FederatedLearning => scratch.federated_learning(block, tx),
            Contract::Llm => scratch.llm(block, tx),
            Contract::Nft => scratch.nft(block, tx),
        };
        if r.is_ok() {
            *self = scratch;
        }
        r
    }

    fn identity(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        let p: IdPayload = decode(tx)?;
        match tx.action.as_str() {
            "register" => {
                if self.identities.get(&p.id).map(|r| r.active).unwrap_or(false) {
                    return Err(format!("identity {} already registered", p.id));
                }
                self.identities.insert(p.id.clone(), IdentityRecord { id: p.id, active: true, registered_at: block.height });
                Ok(())
            }
            "revoke" => {
                let rec = self.identities.get_mut(&p.id).ok_or_else(|| format!("unknown identity {}", p.id))?;
                if !rec.active {
                    return Err(format!("identity {} already revoked", p.id));
                }
                rec.active = false;
                Ok(())
            }
            other => Err(format!("unknown identity action {other:?}")),
        }
    }

    fn service_registry(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        let mut rec: ServiceRecord = decode(tx)?;
        rec.updated_at = block.height;
        match tx.action.as_str() {
            "register" => {
                if self.services.contains_key(&rec.name) {
                    return Err(format!("service {} already registered", rec.name));
                }
                rec.owner = tx.submitter.clone();
                self.services.insert(rec.name.clone(), rec);
                Ok(())
            }
            "update" => {
                let existing = self.services.get(&rec.name).ok_or_else(|| format!("unknown service {}", rec.name))?;
                if existing.owner != tx.submitter {
                    return Err(format!("service {} is owned by {}", rec.name, existing.owner));
                }
                rec.owner = existing.owner.clone();
                self.services.insert(rec.name.clone(), rec);
                Ok(())
            }
            other => Err(format!("unknown service_registry action {other:?}")),
        }
    }

    fn federated_learning(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        match tx.action.as_str() {
            "open_round" => {
                let p: OpenRound = decode(tx)?;
                if self.fl_rounds.contains_key(&p.round) {
                    return Err(format!("round {} already opened", p.round));
                }
                if p.expected_peers.is_empty() {
                    return Err("round without expected peers".into());
                }
                let (base_params, normalization) = if p.round == 0 {
                    let init = p.init_params.ok_or("round 0 requires init_params")?;
                    (init, p.normalization)
                } else {
                    let prev = self.fl_rounds.get(&(p.round - 1)).ok_or_else(|| format!("round {} was never opened", p.round - 1))?;
                    let agg = prev.aggregate.clone().ok_or_else(|| format!("round {} is not sealed", p.round - 1))?;
                    (agg, p.normalization.or_else(|| prev.normalization.clone()))
                };
                self.fl_rounds.insert(
                    p.round,
                    FlRound {
                        round: p.round,
                        expected_peers: p.expected_peers.into_iter().collect(),
                        deadline: p.deadline,
                        base_params,
                        normalization,
                        updates: BTreeMap::new(),
                        status: RoundStatus::Open,
                        aggregate: None,
                        sealed_at: None,
                    },
                );
                Ok(())
            }
            "publish_update" => {
                let u: ModelUpdate = decode(tx)?;
                let round = self.fl_rounds.get_mut(&u.round).ok_or_else(|| format!("round {} is not open", u.round))?;
                if round.status != RoundStatus::Open {
                    return Err(format!("round {} is closed", u.round));
                }
                if u.peer != tx.submitter {
                    return Err(format!("update for {} submitted by {}", u.peer, tx.submitter));
                }
                if !round.expected_peers.contains(&u.peer) {
                    return Err(format!("peer {} is not part of round {}", u.peer, u.round));
                }
                if round.updates.contains_key(&u.peer) {
                    return Err(format!("peer {} already published for round {}", u.peer, u.round));
                }
                if u.params.len() != round.base_params.len() {
                    return Err(format!("update has {} parameters, expected {}", u.params.len(), round.base_params.len()));
                }
                if u.sample_count == 0 {
                    return Err("sample_count must be at least 1".into());
                }
                round.updates.insert(u.peer.clone(), UpdateRecord { height: block.height, tx_id: tx.tx_id, update: u });
                if round.updates.len() == round.expected_peers.len() {
                    seal(round, block.height);
                }
                Ok(())
            }
            "seal_round" => {
                let p: SealRound = decode(tx)?;
                let round = self.fl_rounds.get_mut(&p.round).ok_or_else(|| format!("round {} is not open", p.round))?;
                if round.status != RoundStatus::Open {
                    return Err(format!("round {} is already closed", p.round));
                }
                if block.timestamp <= round.deadline {
                    return Err(format!("round {} deadline has not passed", p.round));
                }
                seal(round, block.height);
                Ok(())
            }
            other => Err(format!("unknown federated_learning action {other:?}")),
        }
    }

    fn llm(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        if tx.action != "record_slo" {
            return Err(format!("unknown llm action {:?}", tx.action));
        }
        let record: Value = decode(tx)?;
        let service = record
            .pointer("/slo/sli/service")
            .and_then(Value::as_str)
            .ok_or("record_slo payload lacks slo.sli.service")?
            .to_string();
        let target = record.pointer("/slo/target").and_then(Value::as_f64).ok_or("record_slo payload lacks slo.target")?;
        if !(target > 0.0 && target < 1.0) {
            return Err(format!("target {target} outside (0, 1)"));
        }
        self.slo_records.push(SloRecord { height: block.height, tx_id: tx.tx_id, submitter: tx.submitter.clone(), service, record });
        Ok(())
    }

    fn nft(&mut self, block: &Block, tx: &Transaction) -> Result<(), String> {
        match tx.action.as_str() {
            "mint" => {
                let token: S528Token = decode(tx)?;
                token.check().map_err(|e| e.to_string())?;
                if self.tokens.contains_key(&token.token_id) {
                    return Err(format!("token {} already minted", token.token_id));
                }
                if token.provenance.issuer != tx.submitter {
                    return Err(format!("issuer {} differs from submitter {}", token.provenance.issuer, tx.submitter));
                }
                let subject = token.subject().map_err(|e| e.to_string())?;
                let expected = self.token_versions.get(&subject).copied().unwrap_or(0) + 1;
                if token.version != expected {
                    return Err(format!("token version {} for {subject}, expected {expected}", token.version));
                }
                self.token_versions.insert(subject, token.version);
                self.tokens.insert(
                    token.token_id,
                    TokenRecord { owner: tx.submitter.clone(), token, minted_at: block.height, mint_tx: tx.tx_id, transfers: Vec::new() },
                );
                Ok(())
            }
            "transfer" => {
                let p: TransferToken = decode(tx)?;
                if !self.is_active_identity(&p.to) {
                    return Err(format!("recipient {} is not a registered identity", p.to));
                }
                let rec = self.tokens.get_mut(&p.token_id).ok_or_else(|| format!("unknown token {}", p.token_id))?;
                if rec.owner != tx.submitter {
                    return Err(format!("token {} is owned by {}", p.token_id, rec.owner));
                }
                rec.owner = p.to.clone();
                rec.transfers.push((block.height, tx.tx_id, p.to));
                Ok(())
            }
            other => Err(format!("unknown nft action {other:?}")),
        }
    }
}

fn decode<T: serde::de::DeserializeOwned>(tx: &Transaction) -> Result<T, String> {
    crate::canonical::from_slice(&tx.payload).map_err(|e| format!("bad {} payload: {e}", tx.contract))
}

/// Seal from on-chain updates only, so every replica computes the same aggregate.
fn seal(round: &mut FlRound, height: u64) {
    let updates: Vec<ModelUpdate> = round.updates.values().map(|u| u.update.clone()).collect();
    match aggregate(&updates) {
        Ok(params) => {
            round.aggregate = Some(params);
            round.status = RoundStatus::Sealed;
        }
        Err(_) => round.status = RoundStatus::Stalled,
    }
    round.sealed_at = Some(height);
}
