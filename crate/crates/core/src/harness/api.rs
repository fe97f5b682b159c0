//! Read-only HTTP view over the chain and store, plus scrape-target registration.
//!
//! | Route | Response |
//! |---|---|
//! | `GET /metrics` | self-telemetry in the text exposition format |
//! | `GET /slos` | latest SLO token per subject, `[{token_id, version, height, slo}]` |
//! | `GET /tokens/{id}` | `{token, owner, minted_at, verified}`; 400 for a malformed id, 404 when unknown |
//! | `POST /scrape-targets` | body `{service_name, url, interval, enabled?}`; 201 created, 200 replaced, 400 invalid |
//! | `GET /alerts` | alerts currently pending or firing |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::HarnessError;
use crate::crypto::Hash32;
use crate::ledger::{Block, ContractState};
use crate::metrics::{FamilySamples, MetricFamily, MetricKind, MetricSample, ScrapeTarget, SeriesKey, TimeSeriesStore};
use crate::monitor::{Alert, AlertState, MonitorError, Sink, SinkRecord};
use crate::nft::TokenKind;
use crate::Duration;

#[derive(Default)]
struct Ledger {
    chain: Vec<Block>,
    state: ContractState,
}

/// Shared read model.
pub struct ApiState {
    pub store: Arc<TimeSeriesStore>,
    ledger: RwLock<Ledger>,
    alerts: RwLock<BTreeMap<String, Alert>>,
    targets: RwLock<Vec<ScrapeTarget>>,
    requests: Mutex<BTreeMap<(String, u16), u64>>,
}

impl ApiState {
    pub fn new(store: Arc<TimeSeriesStore>) -> Self {
        ApiState {
            store,
            ledger: RwLock::default(),
            alerts: RwLock::default(),
            targets: RwLock::default(),
            requests: Mutex::default(),
        }
    }

    pub fn set_ledger(&self, chain: &[Block], state: &ContractState) {
        *self.ledger.write().expect("ledger lock") = Ledger { chain: chain.to_vec(), state: state.clone() };
    }

    pub fn targets(&self) -> Vec<ScrapeTarget> {
        self.targets.read().expect("targets lock").clone()
    }

    /// Add or replace by service name; true when newly added.
    pub fn upsert_target(&self, t: ScrapeTarget) -> bool {
        let mut ts = self.targets.write().expect("targets lock");
        match ts.iter_mut().find(|x| x.service_name == t.service_name) {
            Some(x) => {
                *x = t;
                false
            }
            None => {
                ts.push(t);
                true
            }
        }
    }

    pub fn record_alert(&self, a: &Alert) {
        let mut m = self.alerts.write().expect("alerts lock");
        if a.state == AlertState::Resolved {
            m.remove(&a.rule);
        } else {
            m.insert(a.rule.clone(), a.clone());
        }
    }

    pub fn active_alerts(&self) -> Vec<Alert> {
        self.alerts.read().expect("alerts lock").values().cloned().collect()
    }

    fn slos(&self) -> Value {
        let l = self.ledger.read().expect("ledger lock");
        let mut latest: BTreeMap<String, (u32, Value)> = BTreeMap::new();
        for rec in l.state.tokens.values().filter(|r| r.token.kind == TokenKind::Slo) {
            let Ok(subject) = rec.token.subject() else { continue };
            let Some(slo) = rec.token.slo() else { continue };
            let entry = json!({"token_id": rec.token.token_id, "version": rec.token.version, "height": rec.minted_at, "slo": slo});
            if latest.get(&subject).map_or(true, |(v, _)| *v < rec.token.version) {
                latest.insert(subject, (rec.token.version, entry));
            }
        }
        Value::Array(latest.into_values().map(|(_, v)| v).collect())
    }

    fn token(&self, id: &str) -> Result<Value, (u16, String)> {
        let id: Hash32 = id.parse().map_err(|_| (400, format!("{id:?} is not a 64-digit hex token id")))?;
        let l = self.ledger.read().expect("ledger lock");
        let rec = l.state.tokens.get(&id).ok_or((404, format!("token {id} not found")))?;
        let verified = crate::nft::verify(&id, &l.chain).is_ok();
        Ok(json!({"token": rec.token, "owner": rec.owner, "minted_at": rec.minted_at, "verified": verified}))
    }

    fn telemetry(&self) -> String {
        let gauge = |name: &str, help: &str, v: f64| FamilySamples {
            family: MetricFamily::new(name, MetricKind::Gauge).with_help(help),
            samples: vec![MetricSample::new(SeriesKey::metric(name).expect("static name"), 0, v)],
        };
        let reqs = self.requests.lock().expect("requests lock");
        let counter = FamilySamples {
            family: MetricFamily::new("slokit_api_requests_total", MetricKind::Counter).with_help("API requests by route and status."),
            samples: reqs
                .iter()
                .map(|((route, status), n)| {
                    let k = SeriesKey::new("slokit_api_requests_total", [("route", route.as_str()), ("status", &status.to_string())])
                        .expect("valid labels");
                    MetricSample::new(k, 0, *n as f64)
                })
                .collect(),
        };
        let reader = self.store.read();
        let l = self.ledger.read().expect("ledger lock");
        let fams = vec![
            counter,
            gauge("slokit_store_series", "Series held by the store.", reader.series_count() as f64),
            gauge("slokit_store_samples", "Samples held by the store.", reader.sample_count() as f64),
            gauge("slokit_chain_height", "Height of the newest block.", l.chain.last().map_or(0, |b| b.height) as f64),
            gauge("slokit_tokens", "Minted tokens.", l.state.tokens.len() as f64),
            gauge("slokit_scrape_targets", "Registered scrape targets.", self.targets.read().expect("targets lock").len() as f64),
            gauge(
                "slokit_alerts_firing",
                "Alerts currently firing.",
                self.alerts.read().expect("alerts lock").values().filter(|a| a.state == AlertState::Firing).count() as f64,
            ),
        ];
        crate::metrics::write_exposition(&fams, false)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetBody {
    service_name: String,
    url: String,
    interval: Duration,
    #[serde(default = "yes")]
    enabled: bool,
}

fn yes() -> bool {
    true
}

fn handle(state: &ApiState, req: &mut Request) -> (String, u16, String, &'static str) {
    const JSON: &str = "application/json";
    let url = req.url().split('?').next().unwrap_or("").to_string();
    let method = req.method().clone();
    let ok = |route: &str, v: Value| (route.to_string(), 200, v.to_string(), JSON);
    let err = |route: &str, code: u16, msg: String| (route.to_string(), code, json!({ "error": msg }).to_string(), JSON);
    match (method, url.as_str()) {
        (Method::Get, "/metrics") => ("/metrics".into(), 200, state.telemetry(), super::server::TEXT_FORMAT),
        (Method::Get, "/slos") => ok("/slos", state.slos()),
        (Method::Get, "/alerts") => ok("/alerts", serde_json::to_value(state.active_alerts()).expect("alerts serialize")),
        (Method::Get, u) if u.starts_with("/tokens/") => match state.token(&u["/tokens/".len()..]) {
            Ok(v) => ok("/tokens/{id}", v),
            Err((code, msg)) => err("/tokens/{id}", code, msg),
        },
        (Method::Post, "/scrape-targets") => {
            let mut body = String::new();
            if let Err(e) = req.as_reader().read_to_string(&mut body) {
                return err("/scrape-targets", 400, e.to_string());
            }
            let parsed = serde_json::from_str::<TargetBody>(&body).map_err(|e| e.to_string()).and_then(|b| {
                let t = ScrapeTarget { service_name: b.service_name, url: b.url, interval: b.interval, enabled: b.enabled };
                t.validate().map_err(|e| e.to_string())?;
                Ok(t)
            });
            match parsed {
                Ok(t) => {
                    let v = serde_json::to_value(&t).expect("target serializes");
                    let code = if state.upsert_target(t) { 201 } else { 200 };
                    ("/scrape-targets".into(), code, v.to_string(), JSON)
                }
                Err(m) => err("/scrape-targets", 400, m),
            }
        }
        (_, "/metrics" | "/slos" | "/alerts" | "/scrape-targets") => err(&url, 405, "method not allowed".into()),
        _ => err("other", 404, format!("no route for {url}")),
    }
}

pub struct ApiServer {
    pub addr: SocketAddr,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl ApiServer {
    pub fn start(addr: &str, state: Arc<ApiState>) -> Result<Self, HarnessError> {
        let server = Server::http(addr)
            .map_err(|e| HarnessError::PortUnavailable { service: "api".into(), addr: addr.into(), message: e.to_string() })?;
        let bound = server.server_addr().to_ip().ok_or_else(|| HarnessError::Runtime("API listener has no IP address".into()))?;
        let server = Arc::new(server);
        let s = server.clone();
        let handle = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let (route, code, body, ctype) = handle(&state, &mut req);
                *state.requests.lock().expect("requests lock").entry((route, code)).or_insert(0) += 1;
                let header = Header::from_bytes("Content-Type", ctype).expect("static header");
                let _ = req.respond(Response::from_string(body).with_status_code(code).with_header(header));
            }
        });
        Ok(ApiServer { addr: bound, server, handle: Some(handle) })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Monitor sink that keeps the API's alert view current.
pub struct ApiSink(pub Arc<ApiState>);

impl Sink for ApiSink {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError> {
        if let SinkRecord::Alert(a) = rec {
            self.0.record_alert(a);
        }
        Ok(())
    }
}
