//! Error-budget evaluation, burn-rate alerting and exhaustion forecasts.
//!
//! The monitor only reads the store, apart from its own heartbeat series
//! under [`RESERVED_PREFIX`]. Every tick works from one read snapshot.

mod alerts;
mod run;
mod sink;
mod status;

#[cfg(test)]
mod tests;

pub use alerts::{check_alerts, Alert, AlertState, AlertTracker};
pub use run::{Monitor, MonitorOptions, Predictor, TickSummary, HEARTBEAT_METRIC, RESERVED_PREFIX};
pub use sink::{FanoutSink, JsonlSink, MemorySink, Sink, SinkRecord, WebhookSink};
pub use status::{evaluate, predict_exhaustion, BudgetStatus, PredictOptions, PredictionReport};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("{slo}: query {query:?}: {message}")]
    Eval { slo: String, query: String, message: String },
    #[error("status for {slo} is stale ({age_ms} ms old)")]
    StaleStatus { slo: String, age_ms: i64 },
    #[error("monitor configuration: {0}")]
    Config(String),
    #[error("sink: {0}")]
    Sink(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
