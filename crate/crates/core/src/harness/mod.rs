//! Synthetic workloads, scenario configuration, the end-to-end pipeline and the HTTP API.
//!
//! Everything runs on a simulated clock by default, so identical
//! configurations give bit-identical chains and reports. [`serve`] is the
//! wall-clock mode: live metrics endpoints, a scrape loop, the monitor loop
//! and the API all run concurrently.

mod api;
mod bench;
mod config;
mod discover;
pub mod fixtures;
mod pipeline;
mod server;
mod service;


use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

pub use api::{ApiServer, ApiSink, ApiState};
pub use bench::{bench_csv, bench_ledger, BenchRow, BenchSettings};
pub use config::{
    builtin, default_scenario, FlSettings, LedgerSettings, MonitorSettings, ObjectiveConfig, ScenarioConfig, ScrapeSettings,
    DEFAULT_START_MS, SCHEMA_VERSION,
};
pub use discover::{candidates, discover, feature_spec, label_rule, row_times, CandidateMetric, Discovery, RankedSli};
pub use pipeline::{
    pipeline_run, run_until, simulate_direct, AlertRef, ChainSummary, LedgerRef, Pipeline, PredictionRef, RoundRef, RunReport,
    ScrapeSummary, SloRef, Stage, TokenRef, OPERATOR,
};
pub use server::{wall_now, Clock, ServiceEndpoint};
pub use service::{
    read_trace, write_trace, Endpoint, Fault, LatencyModel, ServiceSim, SyntheticService, TraceRow, LATENCY_BUCKETS, STEP_MS,
};

use crate::metrics::{scrape_once, ScrapeTarget, TimeSeriesStore};
use crate::monitor::{FanoutSink, JsonlSink, Monitor, MonitorOptions, PredictOptions, Predictor};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Configuration or input rejected before anything ran.
    #[error("invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{service}: cannot bind {addr}: {message}")]
    PortUnavailable { service: String, addr: String, message: String },
    /// A pipeline stage failed; `partial` holds what earlier stages produced.
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String, partial: Box<RunReport> },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    crate::ledger::LedgerError,
    crate::ledger::TxError,
    crate::fedlearn::FlError,
    crate::slogen::SlogenError,
    crate::nft::NftError,
    crate::monitor::MonitorError,
    crate::metrics::MetricsError
);

impl HarnessError {
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Invalid(_))
    }
}

/// Wall-clock service mode.
///
/// Runs the simulated pipeline once to establish SLOs, rules and tokens, then
/// serves live synthetic metrics, scrapes every registered target, monitors
/// and exposes the API at `api_addr` until `stop` is set.
pub fn serve(cfg: &ScenarioConfig, api_addr: &str, out: Option<&Path>, stop: Arc<AtomicBool>) -> Result<ApiServer, HarnessError> {
    let p = run_until(cfg, Stage::Mint, out)?;
    let store = Arc::new(TimeSeriesStore::new(cfg.scrape.retention));
    let state = Arc::new(ApiState::new(store.clone()));
    state.set_ledger(p.net.peer(0).chain(), p.net.peer(0).state());

    let now = wall_now();
    let mut endpoints = Vec::new();
    for s in &cfg.services {
        let e = ServiceEndpoint::start(&cfg.scrape.host, ServiceSim::new(s.clone(), cfg.seed, now)?, Clock::Wall)?;
        state.upsert_target(ScrapeTarget::new(&e.name, &e.url(), cfg.scrape.interval)?);
        endpoints.push(e);
    }
    let api = ApiServer::start(api_addr, state.clone())?;

    let timeout = cfg.scrape.timeout.to_std();
    {
        let (state, stop) = (state.clone(), stop.clone());
        std::thread::spawn(move || {
            let _keep = endpoints;
            let mut last: std::collections::BTreeMap<String, i64> = Default::default();
            while !stop.load(Ordering::Relaxed) {
                let now = wall_now();
                for t in state.targets().into_iter().filter(|t| t.enabled) {
                    let due = last.get(&t.service_name).map_or(true, |l| now - l >= t.interval.as_millis_i64());
                    if due {
                        last.insert(t.service_name.clone(), now);
                        let _ = scrape_once(&t, &state.store, now, timeout);
                    }
                }
                std::thread::sleep(std::time::Duration::from_millis(200));
            }
        });
    }

    let m = &cfg.monitor;
    let opts = MonitorOptions {
        interval: m.interval,
        short_window: m.short_window,
        predict: PredictOptions { horizon: m.horizon, ..PredictOptions::default() },
        heartbeat_series: true,
    };
    let slos = p.generated.iter().map(|g| g.slo.clone()).collect();
    let mut mon = Monitor::new(slos, p.rules.clone(), opts)?;
    if let Some(d) = &p.discovery {
        mon = mon.with_predictor(Predictor { params: d.params.clone(), features: d.features.clone() });
    }
    let mut sink = FanoutSink::new().with(ApiSink(state.clone()));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        sink = sink.with(JsonlSink::create(&dir.join("monitor-live.jsonl"))?);
    }
    std::thread::spawn(move || mon.run_wall(&store, &stop, &mut sink));
    Ok(api)
}
