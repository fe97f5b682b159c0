use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::alerts::{Alert, AlertState};
use super::status::{BudgetStatus, PredictionReport};
use super::MonitorError;
use crate::metrics::Timestamp;
use crate::Duration;

/// One line of monitor output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SinkRecord {
    Status(BudgetStatus),
    Alert(Alert),
    Prediction(PredictionReport),
    Error { at: Timestamp, slo: String, message: String },
    Heartbeat { at: Timestamp, tick: u64, slos: usize },
}

pub trait Sink: Send {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError>;

    fn flush(&mut self) -> Result<(), MonitorError> {
        Ok(())
    }
}

/// Keeps records in memory; clones share the buffer.
#[derive(Clone, Default)]
pub struct MemorySink {
    records: Arc<Mutex<Vec<SinkRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<SinkRecord> {
        self.records.lock().expect("sink lock").clone()
    }
}

impl Sink for MemorySink {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError> {
        self.records.lock().expect("sink lock").push(rec.clone());
        Ok(())
    }
}

/// Line-delimited canonical records.
pub struct JsonlSink {
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self, MonitorError> {
        Ok(JsonlSink { out: BufWriter::new(File::create(path)?) })
    }
}

impl Sink for JsonlSink {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError> {
        let line = crate::canonical::to_vec(rec).map_err(|e| MonitorError::Sink(e.to_string()))?;
        self.out.write_all(&line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MonitorError> {
        self.out.flush()?;
        Ok(())
    }
}

/// POSTs every firing transition.
///
/// Body: `{"alert", "slo", "severity", "state", "value", "active_since", "fired_at"}`
/// with timestamps in ms since epoch.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: &str, timeout: Duration) -> Self {
        WebhookSink { url: url.to_string(), agent: ureq::AgentBuilder::new().timeout(timeout.to_std()).build() }
    }

    pub fn body(a: &Alert) -> serde_json::Value {
        json!({
            "alert": a.rule,
            "slo": a.slo,
            "severity": a.severity.to_string(),
            "state": "firing",
            "value": a.value,
            "active_since": a.active_since,
            "fired_at": a.fired_at,
        })
    }
}

impl Sink for WebhookSink {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError> {
        if let SinkRecord::Alert(a) = rec {
            if a.state == AlertState::Firing {
                self.agent.post(&self.url).send_json(Self::body(a)).map_err(|e| MonitorError::Sink(format!("webhook {}: {e}", self.url)))?;
            }
        }
        Ok(())
    }
}

/// Sends each record to every inner sink; one failing sink does not starve the others.
#[derive(Default)]
pub struct FanoutSink {
    sinks: Vec<Box<dyn Sink>>,
}

impl FanoutSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, s: impl Sink + 'static) -> Self {
        self.sinks.push(Box::new(s));
        self
    }
}

impl Sink for FanoutSink {
    fn emit(&mut self, rec: &SinkRecord) -> Result<(), MonitorError> {
        let mut first = None;
        for s in &mut self.sinks {
            if let Err(e) = s.emit(rec) {
                log::warn!("sink error: {e}");
                first.get_or_insert(e);
            }
        }
        first.map_or(Ok(()), Err)
    }

    fn flush(&mut self) -> Result<(), MonitorError> {
        for s in &mut self.sinks {
            s.flush()?;
        }
        Ok(())
    }
}
