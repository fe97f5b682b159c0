//! Metric-derived training rows.
//!
//! Each candidate is a query evaluated over `(t - window, t]` at a fixed step;
//! when it yields several series they are summed per step. The two features
//! per candidate are the mean of those points and their least-squares slope
//! in units per second.

use serde::{Deserialize, Serialize};

use super::FlError;
use crate::metrics::{StoreReader, TimeSeriesStore, Timestamp};
use crate::promql::{self, EvalOptions, Evaluator, Expr};
use crate::Duration;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub query: String,
}

/// Per-feature `(min, max)` from the training range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization(pub Vec<(f64, f64)>);

impl Normalization {
    pub fn fit(data: &LocalDataset) -> Self {
        let d = data.dim();
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for r in &data.rows {
            for (k, x) in r.features.iter().enumerate() {
                b[k].0 = b[k].0.min(*x);
                b[k].1 = b[k].1.max(*x);
            }
        }
        Normalization(b)
    }

    /// Maps `[min, max]` onto `[0, 1]`; a degenerate range maps to 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.0)
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub candidates: Vec<Candidate>,
    pub window: Duration,
    pub step: Duration,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        2 * self.candidates.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.name.clone()).collect()
    }
}

/// Degradation rule: label 1 iff `bad/total > theta` or `latency > lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub bad_query: String,
    pub total_query: String,
    #[serde(default)]
    pub latency_query: Option<String>,
    pub theta: f64,
    pub lambda: f64,
}

impl LabelRule {
    pub const DEFAULT_THETA: f64 = 0.02;
    pub const DEFAULT_LAMBDA: f64 = 1.0;

    /// Rule over a `<prefix>_requests_total{code}` counter and `<prefix>_latency_seconds` histogram.
    pub fn for_service(prefix: &str, window: Duration) -> Self {
        LabelRule {
            bad_query: format!("sum(rate({prefix}_requests_total{{code=~\"5..\"}}[{window}]))"),
            total_query: format!("sum(rate({prefix}_requests_total[{window}]))"),
            latency_query: Some(format!(
                "histogram_quantile(0.99, sum by (le) (rate({prefix}_latency_seconds_bucket[{window}])))"
            )),
            theta: Self::DEFAULT_THETA,
            lambda: Self::DEFAULT_LAMBDA,
        }
    }

    pub fn id(&self) -> String {
        format!("error_ratio>{}|p99>{}s", self.theta, self.lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalDataset {
    pub peer: String,
    pub label_rule: String,
    pub rows: Vec<Row>,
    /// Timestamps dropped because a metric was missing.
    pub skipped: usize,
}

impl LocalDataset {
    pub fn new(peer: &str, rows: Vec<Row>) -> Self {
        LocalDataset { peer: peer.to_string(), label_rule: String::new(), rows, skipped: 0 }
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(|r| r.features.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn normalized(&self, n: &Normalization) -> Self {
        LocalDataset {
            rows: self.rows.iter().map(|r| Row { features: n.apply(&r.features), label: r.label }).collect(),
            ..self.clone()
        }
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label > 0.5).count()
    }

    /// `f0,...,f{d-1},label` with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|k| format!("f{k}")).collect();
        header.push("label".into());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec: Vec<String> = r.features.iter().map(|x| crate::canonical::f64_17(*x)).collect();
            rec.push(format!("{}", r.label));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(peer: &str, text: &str) -> Result<Self, FlError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| FlError::Fixture(e.to_string()))?.clone();
        if header.iter().last() != Some("label") {
            return Err(FlError::Fixture("last column must be `label`".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| FlError::Fixture(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| FlError::Fixture(format!("row {}: {e}", i + 1)))?;
            let (label, features) = vals.split_last().expect("header guarantees a label column");
            if *label != 0.0 && *label != 1.0 {
                return Err(FlError::Fixture(format!("row {}: label must be 0 or 1", i + 1)));
            }
            rows.push(Row { features: features.to_vec(), label: *label });
        }
        Ok(LocalDataset::new(peer, rows))
    }
}

/// `(mean, least-squares slope per second)` of the points.
pub fn window_stats(points: &[(Timestamp, f64)]) -> Option<(f64, f64)> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / n;
    if points.len() == 1 {
        return Some((mean_v, 0.0));
    }
    // Centre time on the first point to keep the sums well conditioned.
    let t0 = points[0].0;
    let ts: Vec<f64> = points.iter().map(|p| (p.0 - t0) as f64 / 1000.0).collect();
    let mean_t = ts.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, p) in ts.iter().zip(points) {
        sxy += (t - mean_t) * (p.1 - mean_v);
        sxx += (t - mean_t) * (t - mean_t);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Some((mean_v, slope))
}

fn parse_query(q: &str) -> Result<Expr, FlError> {
    promql::parse(q).map_err(|d| FlError::Query { query: q.to_string(), message: d[0].message.clone() })
}

fn eval_points(ev: &Evaluator, e: &Expr, q: &str, start: Timestamp, end: Timestamp, step: Duration) -> Result<Vec<(Timestamp, f64)>, FlError> {
    let m = ev.range(e, start, end, step).map_err(|err| FlError::Query { query: q.to_string(), message: err.to_string() })?;
    let mut summed: std::collections::BTreeMap<Timestamp, f64> = std::collections::BTreeMap::new();
    for pts in m.values() {
        for (t, v) in pts {
            if v.is_finite() {
                *summed.entry(*t).or_insert(0.0) += v;
            }
        }
    }
    Ok(summed.into_iter().collect())
}

fn eval_scalar(ev: &Evaluator, e: &Expr, q: &str, t: Timestamp) -> Result<Option<f64>, FlError> {
    let v = ev.instant(e, t).map_err(|err| FlError::Query { query: q.to_string(), message: err.to_string() })?;
    Ok(match v {
        promql::QueryValue::Scalar(x) => Some(x),
        promql::QueryValue::Vector(v) if !v.is_empty() => Some(v.iter().map(|(_, x)| x).sum()),
        _ => None,
    })
}

struct Compiled {
    candidates: Vec<(Expr, String)>,
    bad: Expr,
    total: Expr,
    latency: Option<Expr>,
}

fn compile(spec: &FeatureSpec, rule: &LabelRule) -> Result<Compiled, FlError> {
    if spec.candidates.is_empty() {
        return Err(FlError::InvalidConfig("no candidate metrics".into()));
    }
    if spec.step.as_millis() == 0 || spec.window < spec.step {
        return Err(FlError::InvalidConfig("feature window must be at least one step".into()));
    }
    Ok(Compiled {
        candidates: spec.candidates.iter().map(|c| Ok((parse_query(&c.query)?, c.query.clone()))).collect::<Result<_, FlError>>()?,
        bad: parse_query(&rule.bad_query)?,
        total: parse_query(&rule.total_query)?,
        latency: rule.latency_query.as_deref().map(parse_query).transpose()?,
    })
}

fn row_at(ev: &Evaluator, c: &Compiled, spec: &FeatureSpec, rule: &LabelRule, t: Timestamp) -> Result<Option<Row>, FlError> {
    let start = t - spec.window.as_millis_i64() + spec.step.as_millis_i64();
    let mut features = Vec::with_capacity(spec.dim());
    for (e, q) in &c.candidates {
        let pts = eval_points(ev, e, q, start, t, spec.step)?;
        match window_stats(&pts) {
            Some((m, s)) => {
                features.push(m);
                features.push(s);
            }
            None => return Ok(None),
        }
    }
    let Some(total) = eval_scalar(ev, &c.total, &rule.total_query, t)? else {
        return Ok(None);
    };
    let bad = eval_scalar(ev, &c.bad, &rule.bad_query, t)?.unwrap_or(0.0);
    let ratio = if total > 0.0 { bad / total } else { 0.0 };
    let slow = match &c.latency {
        Some(e) => eval_scalar(ev, e, rule.latency_query.as_deref().unwrap_or(""), t)?.map(|p| p > rule.lambda).unwrap_or(false),
        None => false,
    };
    let label = if ratio > rule.theta || slow { 1.0 } else { 0.0 };
    Ok(Some(Row { features, label }))
}

/// Unnormalized rows at each `t`.
pub fn featurize_raw(
    store: &TimeSeriesStore,
    spec: &FeatureSpec,
    rule: &LabelRule,
    times: &[Timestamp],
    peer: &str,
) -> Result<LocalDataset, FlError> {
    let c = compile(spec, rule)?;
    let reader: StoreReader = store.read();
    let ev = Evaluator::new(&reader, EvalOptions::default());
    let mut data = LocalDataset { peer: peer.to_string(), label_rule: rule.id(), rows: Vec::new(), skipped: 0 };
    for &t in times {
        match row_at(&ev, &c, spec, rule, t)? {
            Some(r) => data.rows.push(r),
            None => data.skipped += 1,
        }
    }
    if data.rows.is_empty() {
        return Err(FlError::EmptyDataset { skipped: data.skipped });
    }
    Ok(data)
}

/// Rows normalized by `spec.normalization`, or by bounds fitted to these rows when unset.
pub fn featurize(
    store: &TimeSeriesStore,
    spec: &FeatureSpec,
    rule: &LabelRule,
    times: &[Timestamp],
    peer: &str,
) -> Result<(LocalDataset, Normalization), FlError> {
    let raw = featurize_raw(store, spec, rule, times, peer)?;
    let n = spec.normalization.clone().unwrap_or_else(|| Normalization::fit(&raw));
    Ok((raw.normalized(&n), n))
}

/// Current normalized features at `t` for prediction, or `None` if a metric is missing.
pub fn feature_vector(reader: &StoreReader, spec: &FeatureSpec, t: Timestamp) -> Result<Option<Vec<f64>>, FlError> {
    if spec.candidates.is_empty() {
        return Err(FlError::InvalidConfig("no candidate metrics".into()));
    }
    let ev = Evaluator::new(reader, EvalOptions::default());
    let start = t - spec.window.as_millis_i64() + spec.step.as_millis_i64();
    let mut out = Vec::with_capacity(spec.dim());
    for c in &spec.candidates {
        let e = parse_query(&c.query)?;
        let Some((m, s)) = window_stats(&eval_points(&ev, &e, &c.query, start, t, spec.step)?) else {
            return Ok(None);
        };
        out.push(m);
        out.push(s);
    }
    Ok(Some(match &spec.normalization {
        Some(n) => n.apply(&out),
        None => out,
    }))
}
