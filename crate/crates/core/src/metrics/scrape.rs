use std::time::Duration as StdDuration;

use serde::{Deserialize, Serialize};

use super::exposition::parse_exposition;
use super::series::{MetricSample, SeriesKey, Timestamp};
use super::store::{IngestReport, TimeSeriesStore};
use super::MetricsError;
use crate::duration::Duration;

/// Name of the synthetic gauge recording scrape health.
pub const UP_METRIC: &str = "up";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrapeTarget {
    pub service_name: String,
    pub url: String,
    pub interval: Duration,
    pub enabled: bool,
}

impl ScrapeTarget {
    pub fn new(service_name: &str, url: &str, interval: Duration) -> Result<Self, MetricsError> {
        let t = ScrapeTarget { service_name: service_name.to_string(), url: url.to_string(), interval, enabled: true };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.interval < Duration::from_secs(1) {
            return Err(MetricsError::InvalidTarget(format!("scrape interval {} is below 1s", self.interval)));
        }
        if self.service_name.is_empty() {
            return Err(MetricsError::InvalidTarget("empty service name".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScrapeError {
    #[error("target for {0} is disabled")]
    Disabled(String),
}

/// Result of fetching a body, kept separate from HTTP so the failure path can be tested.
fn fetch(url: &str, timeout: StdDuration) -> Result<Vec<u8>, String> {
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let resp = agent.get(url).call().map_err(|e| e.to_string())?;
    let mut body = Vec::new();
    std::io::Read::read_to_end(&mut resp.into_reader(), &mut body).map_err(|e| e.to_string())?;
    Ok(body)
}

/// Scrape one target: GET, parse with `scrape_time` as the default timestamp,
/// ingest, and record `up{service=...}` as 1 or 0.
///
/// Network and HTTP failures only show up as `up = 0`.
pub fn scrape_once(
    target: &ScrapeTarget,
    store: &TimeSeriesStore,
    scrape_time: Timestamp,
    timeout: StdDuration,
) -> Result<IngestReport, ScrapeError> {
    if !target.enabled {
        return Err(ScrapeError::Disabled(target.service_name.clone()));
    }
    let parsed = fetch(&target.url, timeout).and_then(|body| parse_exposition(&body, scrape_time).map_err(|e| e.to_string()));
    let up_key = SeriesKey::new(UP_METRIC, [("service", target.service_name.as_str())]).expect("static key");
    match parsed {
        Ok(exp) => {
            for d in &exp.diagnostics {
                log::warn!("{}: line {}: {}", target.url, d.line, d.message);
            }
            let mut samples: Vec<MetricSample> = exp.samples.into_iter().map(|(_, s)| s).collect();
            samples.push(MetricSample::new(up_key, scrape_time, 1.0));
            Ok(store.ingest(samples))
        }
        Err(e) => {
            log::warn!("scrape of {} failed: {e}", target.url);
            Ok(store.ingest([MetricSample::new(up_key, scrape_time, 0.0)]))
        }
    }
}
