//! The end-to-end run: deploy, scrape, discover, generate, mint, monitor.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ScenarioConfig;
use super::discover::{discover, Discovery, RankedSli};
use super::server::{Clock, ServiceEndpoint};
use super::service::{write_trace, ServiceSim, TraceRow};
use super::HarnessError;
use crate::crypto::Hash32;
use crate::ledger::{write_chain_dump, Contract, Network, Outcome, ServiceRecord};
use crate::metrics::{scrape_once, snapshot, LabelMatcher, ScrapeTarget, SeriesMatcher, TimeSeriesStore, Timestamp, UP_METRIC};
use crate::monitor::{
    Alert, FanoutSink, JsonlSink, MemorySink, Monitor, MonitorOptions, PredictOptions, PredictionReport, Predictor, SinkRecord,
    WebhookSink,
};
use crate::nft::{self, encode_s528, next_version, Provenance, S528Token, TokenKind, Tokenizable};
use crate::slogen::{
    build_prompt, derive_alert_rules, export_lines, generate_slo, rules_file, AlertRule, GenerationContext, Generated, RankedMetric,
    SliKind, SloSpec, TEMPLATE_ID,
};

/// Identity every platform action is submitted under.
pub const OPERATOR: &str = "peer-0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Scrape,
    Discover,
    Generate,
    Mint,
    Monitor,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Simulate => "simulate",
            Stage::Scrape => "scrape",
            Stage::Discover => "discover",
            Stage::Generate => "generate",
            Stage::Mint => "mint",
            Stage::Monitor => "monitor",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRef {
    pub name: String,
    pub height: u64,
    pub tx_id: Hash32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScrapeSummary {
    pub scrapes: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRef {
    pub round: u64,
    pub sealed_at: u64,
    pub included: Vec<String>,
    pub excluded: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloRef {
    pub slo: String,
    pub backend: String,
    pub fallback: bool,
    pub repairs: u32,
    pub warnings: Vec<String>,
    pub alert_rules: Vec<String>,
    /// Where the `record_slo` transaction landed.
    pub height: u64,
    pub tx_id: Hash32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRef {
    pub token_id: Hash32,
    pub kind: TokenKind,
    pub subject: String,
    pub version: u32,
    pub height: u64,
    pub tx_id: Hash32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRef {
    pub alert: Alert,
    /// Height of the token that defines the alerting SLO.
    pub slo_token_height: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRef {
    pub prediction: PredictionReport,
    pub slo_token_height: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub height: u64,
    pub head: Hash32,
    pub state_hash: Hash32,
    pub peers: usize,
    pub consistent: bool,
}

/// Everything a run produced. Written canonically as `run_report.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub start_ms: Timestamp,
    pub end_ms: Timestamp,
    pub stages: Vec<Stage>,
    pub services: Vec<LedgerRef>,
    pub scrape: Option<ScrapeSummary>,
    pub sli_ranking: Vec<RankedSli>,
    pub fl_rounds: Vec<RoundRef>,
    pub auc: Option<f64>,
    pub slos: Vec<SloRef>,
    pub slo_tokens: Vec<TokenRef>,
    pub alerts: Vec<AlertRef>,
    pub predictions: Vec<PredictionRef>,
    /// Some objective was generated by the template after the model failed.
    pub llm_fallback: bool,
    pub chain: Option<ChainSummary>,
}

impl RunReport {
    pub fn to_canonical(&self) -> Vec<u8> {
        crate::canonical::to_vec(self).expect("report serializes")
    }
}

/// State carried between stages.
pub struct Pipeline {
    pub cfg: ScenarioConfig,
    pub report: RunReport,
    pub net: Network,
    pub store: std::sync::Arc<TimeSeriesStore>,
    pub trace: Vec<TraceRow>,
    pub discovery: Option<Discovery>,
    pub generated: Vec<Generated>,
    pub rules: Vec<AlertRule>,
    pub tokens: Vec<S528Token>,
    pub monitor_records: Vec<SinkRecord>,
    endpoints: Vec<ServiceEndpoint>,
}

fn write_file(out: Option<&Path>, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Height of the block holding `tx_id` on peer 0, provided it applied cleanly.
fn landed(net: &Network, tx_id: &Hash32) -> Result<u64, String> {
    match net.peer(0).state().receipts.get(tx_id) {
        Some(r) => match &r.outcome {
            Outcome::Applied => Ok(r.height),
            Outcome::AppliedWithError(e) => Err(format!("transaction {tx_id} failed: {e}")),
        },
        None => Err(format!("transaction {tx_id} never reached a block")),
    }
}

/// Run every service without HTTP, ingesting a sample set at each scrape time.
pub fn simulate_direct(cfg: &ScenarioConfig) -> Result<(TimeSeriesStore, Vec<TraceRow>), HarnessError> {
    cfg.validate()?;
    let store = TimeSeriesStore::new(cfg.scrape.retention);
    let mut sims = cfg.services.iter().map(|s| ServiceSim::new(s.clone(), cfg.seed, cfg.start_ms)).collect::<Result<Vec<_>, _>>()?;
    for s in &mut sims {
        s.record_trace();
        store.ingest(s.samples());
    }
    for t in scrape_times(cfg) {
        for s in &mut sims {
            s.advance_to(t);
            store.ingest(s.samples());
        }
    }
    let trace = sims.iter_mut().flat_map(|s| s.take_trace()).collect();
    Ok((store, trace))
}

fn scrape_times(cfg: &ScenarioConfig) -> impl Iterator<Item = Timestamp> {
    let step = cfg.scrape.interval.as_millis_i64();
    let (start, end) = (cfg.start_ms, cfg.end_ms());
    (1..).map(move |i| start + i * step).take_while(move |t| *t <= end)
}

impl Pipeline {
    /// Deploy: start one metrics endpoint per service and register each on the ledger.
    pub fn deploy(cfg: ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let net = Network::new(cfg.ledger.network(), cfg.start_ms)?;
        let store = std::sync::Arc::new(TimeSeriesStore::new(cfg.scrape.retention));
        let report = RunReport { scenario: cfg.name.clone(), seed: cfg.seed, start_ms: cfg.start_ms, end_ms: cfg.end_ms(), ..Default::default() };
        let mut p = Pipeline {
            cfg,
            report,
            net,
            store,
            trace: Vec::new(),
            discovery: None,
            generated: Vec::new(),
            rules: Vec::new(),
            tokens: Vec::new(),
            monitor_records: Vec::new(),
            endpoints: Vec::new(),
        };
        p.stage(Stage::Simulate, |p| p.simulate())?;
        Ok(p)
    }

    fn stage(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
        log::info!("stage {stage}");
        match f(self) {
            Ok(()) => {
                self.report.stages.push(stage);
                Ok(())
            }
            Err(HarnessError::Invalid(p)) => Err(HarnessError::Invalid(p)),
            Err(e) => Err(HarnessError::Stage { stage, message: e.to_string(), partial: Box::new(self.report.clone()) }),
        }
    }

    fn simulate(&mut self) -> Result<(), HarnessError> {
        for s in &self.cfg.services {
            let mut sim = ServiceSim::new(s.clone(), self.cfg.seed, self.cfg.start_ms)?;
            sim.record_trace();
            self.endpoints.push(ServiceEndpoint::start(&self.cfg.scrape.host, sim, Clock::Manual)?);
            // Endpoint ports vary between runs, so the ledger records a logical address.
            let rec = ServiceRecord {
                name: s.name.clone(),
                metrics_endpoint: format!("sim://{}/metrics", s.name),
                container: None,
                deployment: Some(self.cfg.name.clone()),
                owner: OPERATOR.into(),
                updated_at: 0,
            };
            let tx = self.net.submit_as(0, OPERATOR, Contract::ServiceRegistry, "register", &rec)?;
            self.report.services.push(LedgerRef { name: s.name.clone(), height: 0, tx_id: tx });
        }
        self.net.settle();
        for r in &mut self.report.services {
            r.height = landed(&self.net, &r.tx_id).map_err(HarnessError::Runtime)?;
        }
        Ok(())
    }

    pub fn scrape(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        self.stage(Stage::Scrape, |p| p.scrape_inner(out))
    }

    fn scrape_inner(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        let timeout = self.cfg.scrape.timeout.to_std();
        let targets: Vec<ScrapeTarget> = self
            .endpoints
            .iter()
            .map(|e| ScrapeTarget::new(&e.name, &e.url(), self.cfg.scrape.interval))
            .collect::<Result<_, _>>()?;
        let mut sum = ScrapeSummary::default();
        let times: Vec<Timestamp> = std::iter::once(self.cfg.start_ms).chain(scrape_times(&self.cfg)).collect();
        for t in times {
            for (e, target) in self.endpoints.iter().zip(&targets) {
                e.sim.lock().expect("sim lock").advance_to(t);
                let rep = scrape_once(target, &self.store, t, timeout).map_err(|e| HarnessError::Runtime(e.to_string()))?;
                sum.scrapes += 1;
                sum.accepted += rep.accepted;
                sum.rejected += rep.rejected.len();
                let up = SeriesMatcher::name(UP_METRIC).with(LabelMatcher::eq("service", &e.name));
                if self.store.select_range(&up, t, t)?.values().any(|pts| pts.iter().any(|s| s.1 == 0.0)) {
                    sum.failed += 1;
                }
            }
        }
        for e in self.endpoints.drain(..) {
            self.trace.extend(e.sim.lock().expect("sim lock").take_trace());
            e.stop();
        }
        let mut buf = Vec::new();
        write_trace(&mut buf, &self.trace)?;
        write_file(out, "trace.csv", &buf)?;
        write_file(out, "metrics.snapshot", &snapshot::encode(&self.store.dump()))?;
        self.report.scrape = Some(sum);
        Ok(())
    }

    pub fn discover(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        self.stage(Stage::Discover, |p| {
            let end = p.cfg.end_ms();
            p.net.advance_to(end);
            let d = discover(&p.cfg, &p.store, &mut p.net)?;
            p.report.sli_ranking = d.ranking.clone();
            p.report.auc = d.auc;
            p.report.fl_rounds = d
                .rounds
                .iter()
                .map(|r| RoundRef { round: r.round, sealed_at: r.sealed_at, included: r.included.clone(), excluded: r.excluded.clone() })
                .collect();
            write_file(out, "discovery.json", &crate::canonical::to_vec(&d).expect("discovery serializes"))?;
            p.discovery = Some(d);
            Ok(())
        })
    }

    pub fn generate(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        self.stage(Stage::Generate, |p| p.generate_inner(out))
    }

    fn generate_inner(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        let ranking = self.discovery.as_ref().map(|d| d.ranking.clone()).unwrap_or_default();
        let mut txs = Vec::new();
        for o in &self.cfg.objectives {
            let mut ranked: Vec<RankedMetric> = ranking
                .iter()
                .filter(|r| r.service == o.service)
                .map(|r| RankedMetric { name: r.name.clone(), kind: r.kind.clone(), importance: r.importance })
                .collect();
            let selector = match o.kind {
                SliKind::Availability => format!("{}_requests_total", o.service),
                SliKind::Latency => format!("{}_latency_seconds_bucket", o.service),
            };
            if ranked.is_empty() {
                ranked.push(RankedMetric { name: selector.clone(), kind: "counter".into(), importance: 0.0 });
            }
            let objective = o.objective();
            let prompt = build_prompt(&o.service, &ranked, &objective);
            let ctx = GenerationContext::new(&o.service, &selector, objective);
            let g = generate_slo(&self.cfg.backend, &prompt, &ctx)?;
            let rules = derive_alert_rules(&g.slo)?;
            let record = json!({
                "slo": g.slo,
                "backend": g.backend,
                "fallback": g.fallback,
                "repairs": g.repairs,
                "prompt_template": TEMPLATE_ID,
            });
            let tx = self.net.submit_as(0, OPERATOR, Contract::Llm, "record_slo", &record)?;
            self.report.llm_fallback |= g.fallback;
            self.report.slos.push(SloRef {
                slo: g.slo.id(),
                backend: g.backend.clone(),
                fallback: g.fallback,
                repairs: g.repairs,
                warnings: g.warnings.clone(),
                alert_rules: rules.iter().map(|r| r.name.clone()).collect(),
                height: 0,
                tx_id: tx,
            });
            txs.push(tx);
            self.rules.extend(rules);
            self.generated.push(g);
        }
        self.net.settle();
        for s in &mut self.report.slos {
            s.height = landed(&self.net, &s.tx_id).map_err(HarnessError::Runtime)?;
        }
        let slos: Vec<SloSpec> = self.generated.iter().map(|g| g.slo.clone()).collect();
        write_file(out, "slos.jsonl", export_lines(&slos, &self.rules).as_bytes())?;
        write_file(out, "rules.json", &crate::canonical::to_vec(&rules_file(&self.rules)).expect("rules serialize"))?;
        Ok(())
    }

    pub fn mint(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        self.stage(Stage::Mint, |p| p.mint_inner(out))
    }

    fn mint_inner(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        let fl_round = self.report.fl_rounds.last().map(|r| r.round).unwrap_or(0);
        let mut pending = Vec::new();
        for g in &self.generated {
            let prov = Provenance { fl_round, backend: g.backend.clone(), created_at: self.net.now(), issuer: OPERATOR.into() };
            let state = self.net.peer(0).state();
            let sli_v = next_version(state, &g.slo.sli.service, TokenKind::Sli, &g.slo.sli.name);
            let slo_v = next_version(state, &g.slo.sli.service, TokenKind::Slo, &g.slo.sli.name);
            for tok in [encode_s528(Tokenizable::Sli(&g.slo.sli), prov.clone(), sli_v), encode_s528(Tokenizable::Slo(&g.slo), prov.clone(), slo_v)] {
                let tx = nft::mint(&mut self.net, 0, &tok)?;
                pending.push((tok, tx));
            }
            // Versions are assigned from applied state, so land this pair before the next.
            self.net.settle();
        }
        for (tok, tx) in pending {
            let height = landed(&self.net, &tx).map_err(HarnessError::Runtime)?;
            self.report.slo_tokens.push(TokenRef {
                token_id: tok.token_id,
                kind: tok.kind,
                subject: tok.subject()?,
                version: tok.version,
                height,
                tx_id: tx,
            });
            self.tokens.push(tok);
        }
        self.write_chain(out)
    }

    fn write_chain(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        let mut buf = Vec::new();
        write_chain_dump(&mut buf, self.net.peer(0).chain())?;
        write_file(out, "chain.jsonl", &buf)?;
        let p0 = self.net.peer(0);
        self.report.chain = Some(ChainSummary {
            height: p0.chain().last().map(|b| b.height).unwrap_or(0),
            head: p0.state().head,
            state_hash: p0.state().state_hash(),
            peers: self.net.peers().len(),
            consistent: self.net.chains_identical(),
        });
        Ok(())
    }

    pub fn monitor(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        self.stage(Stage::Monitor, |p| p.monitor_inner(out))
    }

    fn monitor_inner(&mut self, out: Option<&Path>) -> Result<(), HarnessError> {
        let m = &self.cfg.monitor;
        let opts = MonitorOptions {
            interval: m.interval,
            short_window: m.short_window,
            predict: PredictOptions { horizon: m.horizon, ..PredictOptions::default() },
            heartbeat_series: true,
        };
        let slos: Vec<SloSpec> = self.generated.iter().map(|g| g.slo.clone()).collect();
        let mut mon = Monitor::new(slos, self.rules.clone(), opts)?;
        if let Some(d) = &self.discovery {
            mon = mon.with_predictor(Predictor { params: d.params.clone(), features: d.features.clone() });
        }
        let mem = MemorySink::new();
        let mut sink = FanoutSink::new().with(mem.clone());
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            sink = sink.with(JsonlSink::create(&dir.join("monitor.jsonl"))?);
        }
        if let Some(url) = &m.webhook {
            sink = sink.with(WebhookSink::new(url, crate::Duration::from_secs(5)));
        }
        let step = m.interval.as_millis_i64();
        let ticks = (m.duration.as_millis_i64() / step).max(1) as u64;
        let first = self.cfg.end_ms() - (ticks as i64 - 1) * step;
        mon.run(&self.store, first, ticks, &mut sink);
        self.monitor_records = mem.records();

        let height_of = |slo: &str| {
            let (svc, name) = slo.split_once('/').unwrap_or((slo, ""));
            let subject = format!("{svc}/{}/{name}", TokenKind::Slo);
            self.report.slo_tokens.iter().find(|t| t.subject == subject).map(|t| t.height).unwrap_or(0)
        };
        let mut latest: std::collections::BTreeMap<String, PredictionReport> = Default::default();
        for r in &self.monitor_records {
            match r {
                SinkRecord::Alert(a) => self.report.alerts.push(AlertRef { alert: a.clone(), slo_token_height: height_of(&a.slo) }),
                SinkRecord::Prediction(p) => {
                    latest.insert(p.slo.clone(), p.clone());
                }
                _ => {}
            }
        }
        self.report.predictions =
            latest.into_values().map(|p| PredictionRef { slo_token_height: height_of(&p.slo), prediction: p }).collect();
        Ok(())
    }
}

/// Full run, writing each stage's artifacts into `out` as it completes.
pub fn pipeline_run(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<Pipeline, HarnessError> {
    run_until(cfg, Stage::Monitor, out)
}

/// Run stages in order through `last`.
pub fn run_until(cfg: &ScenarioConfig, last: Stage, out: Option<&Path>) -> Result<Pipeline, HarnessError> {
    let mut p = Pipeline::deploy(cfg.clone())?;
    if last >= Stage::Scrape {
        p.scrape(out)?;
    }
    if last >= Stage::Discover {
        p.discover(out)?;
    }
    if last >= Stage::Generate {
        p.generate(out)?;
    }
    if last >= Stage::Mint {
        p.mint(out)?;
    }
    if last >= Stage::Monitor {
        p.monitor(out)?;
    }
    if p.report.chain.is_none() {
        p.write_chain(out)?;
    }
    write_file(out, "run_report.json", &p.report.to_canonical())?;
    Ok(p)
}
