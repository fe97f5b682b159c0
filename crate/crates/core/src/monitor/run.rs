use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::alerts::{check_alerts, AlertTracker};
use super::sink::{Sink, SinkRecord};
use super::status::{evaluate, predict_exhaustion, PredictOptions};
use super::MonitorError;
use crate::fedlearn::{feature_vector, predict_violation, FeatureSpec, ModelParams};
use crate::metrics::{MetricSample, SeriesKey, TimeSeriesStore, Timestamp};
use crate::slogen::{AlertRule, SloSpec};
use crate::Duration;

/// Series written by the monitor itself all start with this.
pub const RESERVED_PREFIX: &str = "slokit:";
pub const HEARTBEAT_METRIC: &str = "slokit:monitor_heartbeat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub params: ModelParams,
    /// Must carry the round-0 normalization.
    pub features: FeatureSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorOptions {
    pub interval: Duration,
    /// Lookback for the current burn used in forecasts.
    pub short_window: Duration,
    pub predict: PredictOptions,
    /// Write the heartbeat series into the store each tick.
    pub heartbeat_series: bool,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions {
            interval: Duration::from_secs(60),
            short_window: Duration::from_hours(1),
            predict: PredictOptions::default(),
            heartbeat_series: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TickSummary {
    pub at: Timestamp,
    pub statuses: usize,
    pub alerts: usize,
    pub predictions: usize,
    pub errors: usize,
}

pub struct Monitor {
    slos: Vec<SloSpec>,
    rules: Vec<AlertRule>,
    opts: MonitorOptions,
    predictor: Option<Predictor>,
    tracker: AlertTracker,
    ticks: u64,
}

impl Monitor {
    pub fn new(slos: Vec<SloSpec>, rules: Vec<AlertRule>, opts: MonitorOptions) -> Result<Self, MonitorError> {
        if opts.interval < Duration::from_secs(1) {
            return Err(MonitorError::Config(format!("interval {} is below 1s", opts.interval)));
        }
        Ok(Monitor { slos, rules, opts, predictor: None, tracker: AlertTracker::new(), ticks: 0 })
    }

    pub fn with_predictor(mut self, p: Predictor) -> Self {
        self.predictor = Some(p);
        self
    }

    pub fn tracker(&self) -> &AlertTracker {
        &self.tracker
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Evaluate everything once against a single store snapshot.
    pub fn tick(&mut self, store: &TimeSeriesStore, now: Timestamp, sink: &mut dyn Sink) -> TickSummary {
        let mut out = Vec::new();
        let mut sum = TickSummary { at: now, ..TickSummary::default() };
        {
            let reader = store.read();
            let fl = self.predictor.as_ref().and_then(|p| match feature_vector(&reader, &p.features, now) {
                Ok(Some(x)) => predict_violation(&p.params, &x).ok(),
                Ok(None) => None,
                Err(e) => {
                    log::warn!("predictor features: {e}");
                    None
                }
            });
            for slo in &self.slos {
                match evaluate(slo, &reader, now, Some(self.opts.short_window)) {
                    Ok(status) => {
                        let pred = predict_exhaustion(&status, now, self.opts.predict);
                        out.push(SinkRecord::Status(status));
                        sum.statuses += 1;
                        match pred {
                            Ok(mut p) => {
                                p.fl_probability = fl;
                                out.push(SinkRecord::Prediction(p));
                                sum.predictions += 1;
                            }
                            Err(e) => out.push(error_record(now, &slo.id(), &e)),
                        }
                    }
                    Err(e) => {
                        sum.errors += 1;
                        out.push(error_record(now, &slo.id(), &e));
                    }
                }
            }
            let (alerts, errors) = check_alerts(&self.rules, &reader, now, &mut self.tracker);
            sum.alerts = alerts.len();
            sum.errors += errors.len();
            out.extend(alerts.into_iter().map(SinkRecord::Alert));
            for e in errors {
                let slo = match &e {
                    MonitorError::Eval { slo, .. } => slo.clone(),
                    _ => String::new(),
                };
                out.push(error_record(now, &slo, &e));
            }
        }
        self.ticks += 1;
        out.push(SinkRecord::Heartbeat { at: now, tick: self.ticks, slos: self.slos.len() });
        if self.opts.heartbeat_series {
            let key = SeriesKey::metric(HEARTBEAT_METRIC).expect("reserved name is valid");
            store.ingest([MetricSample::new(key, now, self.ticks as f64)]);
        }
        for rec in &out {
            if let Err(e) = sink.emit(rec) {
                log::warn!("dropping record: {e}");
            }
        }
        if let Err(e) = sink.flush() {
            log::warn!("sink flush: {e}");
        }
        sum
    }

    /// Simulated clock: `ticks` evaluations at `start, start + interval, ...`.
    pub fn run(&mut self, store: &TimeSeriesStore, start: Timestamp, ticks: u64, sink: &mut dyn Sink) -> Vec<TickSummary> {
        let step = self.opts.interval.as_millis_i64();
        (0..ticks).map(|i| self.tick(store, start + i as i64 * step, sink)).collect()
    }

    /// Wall clock until `stop` is set.
    pub fn run_wall(&mut self, store: &TimeSeriesStore, stop: &AtomicBool, sink: &mut dyn Sink) {
        while !stop.load(Ordering::Relaxed) {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0);
            self.tick(store, now, sink);
            let mut left = self.opts.interval.to_std();
            let slice = std::time::Duration::from_millis(100);
            while !left.is_zero() && !stop.load(Ordering::Relaxed) {
                let s = left.min(slice);
                std::thread::sleep(s);
                left -= s;
            }
        }
    }
}

fn error_record(at: Timestamp, slo: &str, e: &MonitorError) -> SinkRecord {
    log::warn!("{slo}: {e}");
    SinkRecord::Error { at, slo: slo.to_string(), message: e.to_string() }
}
