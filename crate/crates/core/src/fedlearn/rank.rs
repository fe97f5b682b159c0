use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::model::{loss, predict};
use super::{FlError, LocalDataset, ModelParams};

pub const PERMUTATIONS: usize = 20;

fn seed_for(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Permutation importance per metric, sorted descending with ties by name.
///
/// Metric `i` owns feature columns `2i` (mean) and `2i+1` (slope); both are
/// permuted together. The shuffle stream is seeded from the metric name, so
/// reordering the candidates does not change any score.
pub fn rank_sli(params: &ModelParams, data: &LocalDataset, metrics: &[String]) -> Result<Vec<(String, f64)>, FlError> {
    if data.dim() != 2 * metrics.len() {
        return Err(FlError::DimensionMismatch { expected: 2 * metrics.len(), got: data.dim() });
    }
    let base = loss(params, data)?;
    let mut out = Vec::with_capacity(metrics.len());
    for (i, name) in metrics.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(name));
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut sum = 0.0;
        for _ in 0..PERMUTATIONS {
            idx.shuffle(&mut rng);
            let mut permuted = data.clone();
            for (row, &src) in permuted.rows.iter_mut().zip(&idx) {
                row.features[2 * i] = data.rows[src].features[2 * i];
                row.features[2 * i + 1] = data.rows[src].features[2 * i + 1];
            }
            sum += loss(params, &permuted)? - base;
        }
        out.push((name.clone(), sum / PERMUTATIONS as f64));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Probability that the SLO is about to be violated given current features.
pub fn predict_violation(params: &ModelParams, features: &[f64]) -> Result<f64, FlError> {
    predict(params, features)
}

/// Area under the ROC curve by brute-force pair counting; ties count one half.
pub fn auc(params: &ModelParams, data: &LocalDataset) -> Result<f64, FlError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in &data.rows {
        let p = predict(params, &r.features)?;
        if r.label > 0.5 {
            pos.push(p)
        } else {
            neg.push(p)
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(FlError::InvalidConfig("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}
