use serde::{Deserialize, Serialize};

use super::{FlError, ModelParams};

/// One peer's contribution to a round, as published on chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub round: u64,
    pub peer: String,
    pub params: ModelParams,
    pub sample_count: u64,
    #[serde(with = "super::f64_string")]
    pub train_loss: f64,
}

/// Sample-weighted FedAvg.
///
/// Updates are summed in peer-id order as offsets from the first one,
/// `w_0 + Σ (n_i / N)(w_i - w_0)`, which is the weighted mean and returns
/// identical inputs bit-for-bit.
pub fn aggregate(updates: &[ModelUpdate]) -> Result<ModelParams, FlError> {
    let mut sorted: Vec<&ModelUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.peer.cmp(&b.peer));
    let Some(first) = sorted.first() else {
        return Err(FlError::NoUpdates);
    };
    let dim = first.params.len();
    let mut total = 0u64;
    for u in &sorted {
        if u.params.len() != dim {
            return Err(FlError::DimensionMismatch { expected: dim, got: u.params.len() });
        }
        if u.round != first.round {
            return Err(FlError::RoundMismatch { expected: first.round, got: u.round });
        }
        if u.sample_count == 0 {
            return Err(FlError::InvalidConfig(format!("update from {} has zero samples", u.peer)));
        }
        total += u.sample_count;
    }
    let base = first.params.as_slice();
    let mut out = base.to_vec();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for u in &sorted[1..] {
            acc += (u.sample_count as f64 / total as f64) * (u.params.0[k] - base[k]);
        }
        *o += acc;
    }
    Ok(ModelParams(out))
}
