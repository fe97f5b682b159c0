//! Synthetic services: seeded request streams with scheduled faults.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::crypto::FieldHasher;
use crate::metrics::{FamilySamples, MetricFamily, MetricKind, MetricSample, SeriesKey, Timestamp};
use crate::Duration;

/// Finite histogram bounds in seconds; `+Inf` is implicit.
pub const LATENCY_BUCKETS: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0];

/// Simulation resolution.
pub const STEP_MS: i64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    /// Log-normal location and scale of the latency in seconds.
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub path: String,
    /// Mean requests per second.
    pub base_rate: f64,
    pub error_ratio: f64,
    pub latency: LatencyModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    /// Offset from simulation start.
    pub start: Duration,
    pub duration: Duration,
    /// Restrict to one endpoint; all endpoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_ratio_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_scale: Option<f64>,
}

impl Fault {
    fn covers(&self, offset_ms: i64, path: &str) -> bool {
        let s = self.start.as_millis_i64();
        offset_ms >= s && offset_ms < s + self.duration.as_millis_i64() && self.path.as_deref().map_or(true, |p| p == path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticService {
    pub name: String,
    /// Port for the metrics endpoint; 0 picks a free one.
    #[serde(default)]
    pub port: u16,
    pub endpoints: Vec<Endpoint>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

fn ratio_ok(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl SyntheticService {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = &self.name;
        if !crate::metrics::is_valid_metric_name(&format!("{n}_requests_total")) || n.contains(':') {
            out.push(format!("service name {n:?} does not form valid metric names"));
        }
        if self.endpoints.is_empty() {
            out.push(format!("{n}: no endpoints"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.endpoints {
            if !seen.insert(&e.path) {
                out.push(format!("{n}: duplicate endpoint {}", e.path));
            }
            if !(e.base_rate >= 0.0 && e.base_rate.is_finite()) {
                out.push(format!("{n}{}: base_rate must be a non-negative number", e.path));
            }
            if !ratio_ok(e.error_ratio) {
                out.push(format!("{n}{}: error_ratio {} outside [0, 1]", e.path, e.error_ratio));
            }
            if !(e.latency.mu.is_finite() && e.latency.sigma > 0.0 && e.latency.sigma.is_finite()) {
                out.push(format!("{n}{}: latency needs finite mu and positive sigma", e.path));
            }
        }
        for f in &self.faults {
            if let Some(p) = &f.path {
                if !self.endpoints.iter().any(|e| &e.path == p) {
                    out.push(format!("{n}: fault targets unknown endpoint {p}"));
                }
            }
            if let Some(r) = f.error_ratio_override {
                if !ratio_ok(r) {
                    out.push(format!("{n}: fault error ratio {r} outside [0, 1]"));
                }
            }
            if let Some(s) = f.latency_scale {
                if !(s > 0.0 && s.is_finite()) {
                    out.push(format!("{n}: latency_scale must be positive"));
                }
            }
            if f.error_ratio_override.is_none() && f.latency_scale.is_none() {
                out.push(format!("{n}: fault at {} changes nothing", f.start));
            }
        }
        out
    }

    /// Effective `(error_ratio, latency_scale)` for `path` at `offset_ms` into the run.
    /// Later faults win when several overlap.
    pub fn effective(&self, e: &Endpoint, offset_ms: i64) -> (f64, f64) {
        let mut ratio = e.error_ratio;
        let mut scale = 1.0;
        for f in self.faults.iter().filter(|f| f.covers(offset_ms, &e.path)) {
            if let Some(r) = f.error_ratio_override {
                ratio = r;
            }
            if let Some(s) = f.latency_scale {
                scale = s;
            }
        }
        (ratio, scale)
    }
}

/// One simulated second of one endpoint. Columns, in order:
/// `t_ms` end of the step, `service`, `path`, `requests`, `errors`,
/// `error_ratio` and `latency_scale` in effect, `latency_sum` in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_ms: Timestamp,
    pub service: String,
    pub path: String,
    pub requests: u64,
    pub errors: u64,
    pub error_ratio: f64,
    pub latency_scale: f64,
    pub latency_sum: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Counters {
    ok: u64,
    err: u64,
    /// Non-cumulative; the last slot is `+Inf`.
    buckets: [u64; LATENCY_BUCKETS.len() + 1],
    sum: f64,
}

/// Running state of one service. Deterministic for a given seed.
pub struct ServiceSim {
    svc: SyntheticService,
    rng: ChaCha8Rng,
    start: Timestamp,
    now: Timestamp,
    counters: Vec<Counters>,
    trace: Option<Vec<TraceRow>>,
}

fn service_seed(seed: u64, name: &str) -> u64 {
    let mut f = FieldHasher::new();
    f.u64(seed).str(name);
    let h = f.finish();
    u64::from_be_bytes(h.as_bytes()[..8].try_into().expect("8 bytes"))
}

impl ServiceSim {
    pub fn new(svc: SyntheticService, seed: u64, start: Timestamp) -> Result<Self, HarnessError> {
        let p = svc.problems();
        if !p.is_empty() {
            return Err(HarnessError::Invalid(p));
        }
        Ok(ServiceSim {
            rng: ChaCha8Rng::seed_from_u64(service_seed(seed, &svc.name)),
            counters: vec![Counters::default(); svc.endpoints.len()],
            svc,
            start,
            now: start,
            trace: None,
        })
    }

    /// Keep per-step rows from now on.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn service(&self) -> &SyntheticService {
        &self.svc
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// Step whole seconds until the clock reaches `t`; never moves backwards.
    pub fn advance_to(&mut self, t: Timestamp) {
        while self.now + STEP_MS <= t {
            self.step();
        }
    }

    fn step(&mut self) {
        self.now += STEP_MS;
        let offset = self.now - self.start - STEP_MS;
        for (i, e) in self.svc.endpoints.iter().enumerate() {
            let (ratio, scale) = self.svc.effective(e, offset);
            let n = if e.base_rate > 0.0 {
                Poisson::new(e.base_rate * STEP_MS as f64 / 1000.0).expect("positive rate").sample(&mut self.rng) as u64
            } else {
                0
            };
            let bad = if n > 0 && ratio > 0.0 { Binomial::new(n, ratio).expect("ratio checked").sample(&mut self.rng) } else { 0 };
            let lat = LogNormal::new(e.latency.mu, e.latency.sigma).expect("sigma checked");
            let c = &mut self.counters[i];
            let mut sum = 0.0;
            for _ in 0..n {
                let x = lat.sample(&mut self.rng) * scale;
                sum += x;
                let k = LATENCY_BUCKETS.iter().position(|b| x <= *b).unwrap_or(LATENCY_BUCKETS.len());
                c.buckets[k] += 1;
            }
            c.ok += n - bad;
            c.err += bad;
            c.sum += sum;
            if let Some(tr) = &mut self.trace {
                tr.push(TraceRow {
                    t_ms: self.now,
                    service: self.svc.name.clone(),
                    path: e.path.clone(),
                    requests: n,
                    errors: bad,
                    error_ratio: ratio,
                    latency_scale: scale,
                    latency_sum: sum,
                });
            }
        }
    }

    /// Current counters as exposition families: `<svc>_requests_total{code,path}`
    /// and the `<svc>_latency_seconds{path}` histogram.
    pub fn families(&self) -> Vec<FamilySamples> {
        let name = &self.svc.name;
        let req = format!("{name}_requests_total");
        let hist = format!("{name}_latency_seconds");
        let key = |metric: &str, path: &str| SeriesKey::new(metric, [("path", path)]).expect("validated names");
        let mut reqs = Vec::new();
        let mut buckets = Vec::new();
        let mut sums = Vec::new();
        let mut counts = Vec::new();
        for (e, c) in self.svc.endpoints.iter().zip(&self.counters) {
            reqs.push(MetricSample::new(key(&req, &e.path).with_label("code", "200"), self.now, c.ok as f64));
            reqs.push(MetricSample::new(key(&req, &e.path).with_label("code", "500"), self.now, c.err as f64));
            let mut cum = 0;
            for (k, n) in c.buckets.iter().enumerate() {
                cum += n;
                let le = LATENCY_BUCKETS.get(k).map(|b| format!("{b}")).unwrap_or_else(|| "+Inf".into());
                buckets.push(MetricSample::new(key(&format!("{hist}_bucket"), &e.path).with_label("le", &le), self.now, cum as f64));
            }
            sums.push(MetricSample::new(key(&format!("{hist}_sum"), &e.path), self.now, c.sum));
            counts.push(MetricSample::new(key(&format!("{hist}_count"), &e.path), self.now, (c.ok + c.err) as f64));
        }
        buckets.extend(sums);
        buckets.extend(counts);
        vec![
            FamilySamples { family: MetricFamily::new(&req, MetricKind::Counter).with_help("Requests by endpoint and status code."), samples: reqs },
            FamilySamples { family: MetricFamily::new(&hist, MetricKind::Histogram).with_help("Request latency."), samples: buckets },
        ]
    }

    pub fn samples(&self) -> Vec<MetricSample> {
        self.families().into_iter().flat_map(|f| f.samples).collect()
    }

    pub fn exposition(&self) -> String {
        crate::metrics::write_exposition(&self.families(), false)
    }
}

pub fn write_trace<W: std::io::Write>(w: W, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["t_ms", "service", "path", "requests", "errors", "error_ratio", "latency_scale", "latency_sum"])
            .map_err(|e| HarnessError::Io(e.into()))?;
    }
    for r in rows {
        out.serialize(r).map_err(|e| HarnessError::Io(e.into()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: std::io::Read>(r: R) -> Result<Vec<TraceRow>, HarnessError> {
    csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>().map_err(|e| HarnessError::Io(e.into()))
}
