//! Candidate SLI enumeration and the federated discovery stage.

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::HarnessError;
use crate::fedlearn::{
    self, auc, featurize_raw, rank_sli, run_round, Candidate, FeatureSpec, LabelRule, ModelParams, Normalization, RoundConfig,
    RoundOutcome, Shard, TrainConfig,
};
use crate::ledger::Network;
use crate::metrics::{TimeSeriesStore, Timestamp};

/// A candidate metric plus what the prompt needs to know about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetric {
    pub candidate: Candidate,
    pub service: String,
    /// `counter` or `histogram`.
    pub kind: String,
}

/// Per endpoint with traffic: error rate, request rate and p99 latency.
pub fn candidates(cfg: &ScenarioConfig) -> Vec<CandidateMetric> {
    let w = cfg.fl.rate_window;
    let mut out = Vec::new();
    for s in &cfg.services {
        let n = &s.name;
        for e in s.endpoints.iter().filter(|e| e.base_rate > 0.0) {
            let p = &e.path;
            let mut push = |name: String, query: String, kind: &str| {
                out.push(CandidateMetric { candidate: Candidate { name, query }, service: n.clone(), kind: kind.into() })
            };
            push(
                format!("{n}_requests_total{{path=\"{p}\",code=~\"5..\"}}"),
                format!("sum(rate({n}_requests_total{{path=\"{p}\",code=~\"5..\"}}[{w}]))"),
                "counter",
            );
            push(
                format!("{n}_requests_total{{path=\"{p}\"}}"),
                format!("sum(rate({n}_requests_total{{path=\"{p}\"}}[{w}]))"),
                "counter",
            );
            push(
                format!("{n}_latency_seconds_bucket{{path=\"{p}\"}}"),
                format!("histogram_quantile(0.99, sum by (le) (rate({n}_latency_seconds_bucket{{path=\"{p}\"}}[{w}])))"),
                "histogram",
            );
        }
    }
    out
}

pub fn feature_spec(cfg: &ScenarioConfig) -> FeatureSpec {
    FeatureSpec {
        candidates: candidates(cfg).into_iter().map(|c| c.candidate).collect(),
        window: cfg.fl.feature_window,
        step: cfg.fl.feature_step,
        normalization: None,
    }
}

pub fn label_rule(cfg: &ScenarioConfig) -> LabelRule {
    let mut r = LabelRule::for_service(cfg.label_service(), cfg.fl.rate_window);
    r.theta = cfg.fl.theta;
    r.lambda = cfg.fl.lambda;
    r
}

/// Row timestamps: per-peer training sets dealt round-robin, then the trailing holdout.
pub fn row_times(cfg: &ScenarioConfig) -> (Vec<Vec<Timestamp>>, Vec<Timestamp>) {
    let fl = &cfg.fl;
    let first = cfg.start_ms + (fl.feature_window.as_millis() + fl.rate_window.as_millis()) as i64;
    let step = fl.sample_every.as_millis_i64();
    let all: Vec<Timestamp> = (0..).map(|i| first + i * step).take_while(|t| *t <= cfg.end_ms()).collect();
    let cut = all.len() - (all.len() as f64 * fl.holdout).round() as usize;
    let mut shards = vec![Vec::new(); fl.peers];
    for (i, t) in all[..cut].iter().enumerate() {
        shards[i % fl.peers].push(*t);
    }
    (shards, all[cut..].to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSli {
    pub name: String,
    pub service: String,
    pub kind: String,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub ranking: Vec<RankedSli>,
    pub rounds: Vec<RoundOutcome>,
    /// Held-out AUC; absent when the holdout lacks one of the classes.
    pub auc: Option<f64>,
    pub params: ModelParams,
    /// Carries the published normalization.
    pub features: FeatureSpec,
    pub label_rule: LabelRule,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub positives: usize,
}

impl Discovery {
    pub fn top(&self) -> Option<&RankedSli> {
        self.ranking.first()
    }
}

/// Featurize each peer's rows, run the configured rounds over the ledger and rank candidates on the holdout.
pub fn discover(cfg: &ScenarioConfig, store: &TimeSeriesStore, net: &mut Network) -> Result<Discovery, HarnessError> {
    let metas = candidates(cfg);
    if metas.is_empty() {
        return Err(HarnessError::Invalid(vec!["no endpoint has traffic, so there are no candidate metrics".into()]));
    }
    let mut spec = feature_spec(cfg);
    let rule = label_rule(cfg);
    let (times, holdout_t) = row_times(cfg);
    let raw: Vec<_> = times
        .iter()
        .enumerate()
        .map(|(i, ts)| featurize_raw(store, &spec, &rule, ts, net.peer_id(i)))
        .collect::<Result<_, _>>()?;
    let norm = Normalization::fit(&raw[0]);
    let shards: Vec<Shard> =
        raw.iter().enumerate().map(|(i, d)| Shard { peer: i, data: d.normalized(&norm), silent: false }).collect();
    let fl = &cfg.fl;
    let mut rounds = Vec::new();
    for r in 0..fl.rounds {
        let rc = RoundConfig {
            round: r,
            train: TrainConfig { epochs: fl.epochs, lr: fl.lr },
            deadline_after: fl.deadline,
            hidden: fl.hidden,
            init_seed: fl.seed,
            normalization: (r == 0).then(|| norm.clone()),
        };
        rounds.push(run_round(net, &rc, &shards)?);
    }
    let params = rounds.last().expect("at least one round").aggregate.clone();
    spec.normalization = Some(norm.clone());
    let eval = if holdout_t.is_empty() {
        shards.iter().fold(fedlearn::LocalDataset::new("holdout", vec![]), |mut acc, s| {
            acc.rows.extend(s.data.rows.iter().cloned());
            acc
        })
    } else {
        featurize_raw(store, &spec, &rule, &holdout_t, "holdout")?.normalized(&norm)
    };
    let names: Vec<String> = metas.iter().map(|m| m.candidate.name.clone()).collect();
    let ranking = rank_sli(&params, &eval, &names)?
        .into_iter()
        .map(|(name, importance)| {
            let m = metas.iter().find(|m| m.candidate.name == name).expect("ranked names come from candidates");
            RankedSli { name, service: m.service.clone(), kind: m.kind.clone(), importance }
        })
        .collect();
    let pos = eval.positives();
    let auc = if pos > 0 && pos < eval.len() { Some(auc(&params, &eval)?) } else { None };
    Ok(Discovery {
        ranking,
        rounds,
        auc,
        params,
        features: spec,
        label_rule: rule,
        train_rows: shards.iter().map(|s| s.data.len()).sum(),
        holdout_rows: eval.len(),
        positives: pos,
    })
}
