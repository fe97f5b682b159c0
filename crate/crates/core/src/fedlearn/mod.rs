//! Coordinator-less federated learning over the ledger.
//!
//! Peers turn their local metrics into `(mean, slope)` feature rows, train a
//! small logistic network, and publish the result as a `federated_learning`
//! transaction. The round's aggregate is computed by the contract itself,
//! so there is no coordinator and every replica derives the same model.
//!
//! ```
//! use slokit::fedlearn::{aggregate, ModelParams, ModelUpdate};
//!
//! let u = |peer: &str, p: Vec<f64>, n| ModelUpdate {
//!     round: 0, peer: peer.into(), params: ModelParams(p), sample_count: n, train_loss: 0.0,
//! };
//! let avg = aggregate(&[u("a", vec![2.0, 4.0], 1), u("b", vec![4.0, 8.0], 3)]).unwrap();
//! assert_eq!(avg.0, vec![3.5, 7.0]);
//! ```

mod aggregate;
mod features;
mod model;
mod rank;
mod round;

#[cfg(test)]
mod tests;

pub use aggregate::{aggregate, ModelUpdate};
pub use features::{feature_vector, featurize, featurize_raw, window_stats, Candidate, FeatureSpec, LabelRule, LocalDataset, Normalization, Row};
pub use model::{gradient, local_train, logit, loss, param_len, predict, sigmoid, ModelParams, TrainConfig, DEFAULT_HIDDEN};
pub use rank::{auc, predict_violation, rank_sli, PERMUTATIONS};
pub use round::{run_round, RoundConfig, RoundOutcome, Shard};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlError {
    #[error("every row was skipped ({skipped} timestamps lacked a metric)")]
    EmptyDataset { skipped: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("round mismatch: expected {expected}, got {got}")]
    RoundMismatch { expected: u64, got: u64 },
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: String },
    #[error("no updates to aggregate")]
    NoUpdates,
    #[error("round {0} stalled: no updates before the deadline")]
    RoundStalled(u64),
    #[error("query {query:?}: {message}")]
    Query { query: String, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

mod f64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::canonical::f64_17(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        crate::canonical::parse_f64_17(&s).ok_or_else(|| serde::de::Error::custom(format!("bad float {s:?}")))
    }
}

mod f64_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k, crate::canonical::f64_17(*v))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        BTreeMap::<String, String>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                crate::canonical::parse_f64_17(&v).map(|x| (k, x)).ok_or_else(|| serde::de::Error::custom(format!("bad float {v:?}")))
            })
            .collect()
    }
}
