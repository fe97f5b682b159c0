
use proptest::prelude::*;

use super::*;
use crate::harness::fixtures::BurnTrace;
use crate::metrics::{MetricSample, SeriesKey, TimeSeriesStore, Timestamp};
use crate::slogen::{derive_alert_rules, template_slo, AlertRule, GenerationContext, Objective, Severity, SloSpec};
use crate::Duration;

const MIN: i64 = 60_000;
const HOUR: i64 = 60 * MIN;
const DAY: i64 = 24 * HOUR;

fn vault_slo(target: f64, window: Duration) -> SloSpec {
    let mut ctx = GenerationContext::new("vault", "vault_requests_total", Objective::availability(target, window));
    ctx.windows.push(window);
    template_slo(&ctx).unwrap()
}

fn store_of(samples: Vec<MetricSample>, retention: Duration) -> TimeSeriesStore {
    let s = TimeSeriesStore::new(retention);
    let rep = s.ingest(samples);
    assert_eq!(rep.rejected.len(), 0);
    s
}

/// Ratio computed straight from raw samples: non-negative deltas inside `[now - w, now]`.
fn brute_bad_fraction(samples: &[MetricSample], now: Timestamp, w: Duration) -> Option<f64> {
    let lo = now - w.as_millis_i64();
    let mut per_code: std::collections::BTreeMap<String, Vec<(i64, f64)>> = Default::default();
    for s in samples {
        if s.timestamp >= lo && s.timestamp <= now {
            per_code.entry(s.series.label("code").unwrap().to_string()).or_default().push((s.timestamp, s.value));
        }
    }
    let inc = |v: &Vec<(i64, f64)>| v.windows(2).map(|p| if p[1].1 >= p[0].1 { p[1].1 - p[0].1 } else { p[1].1 }).sum::<f64>();
    let total: f64 = per_code.values().map(inc).sum();
    let good: f64 = per_code.iter().filter(|(c, _)| !c.starts_with('5')).map(|(_, v)| inc(v)).sum();
    (total > 0.0).then(|| 1.0 - good / total)
}

#[test]
fn two_percent_errors_overdraw_budget() {
    let slo = vault_slo(0.99, Duration::from_days(1));
    let trace = BurnTrace::new("vault", 10.0, MIN).segment(-1, 0.02);
    let store = store_of(trace.samples(2 * DAY), Duration::from_days(3));
    let s = evaluate(&slo, &store.read(), 2 * DAY, None).unwrap();
    assert!((s.bad_fraction - 0.02).abs() < 1e-12);
    assert!((s.burn_rate - 2.0).abs() < 1e-9);
    assert!((s.consumed_fraction - 2.0).abs() < 1e-9);
    assert_eq!(s.remaining_fraction, 0.0);
    assert!(!s.healthy);
    assert!(!s.no_traffic);
    assert_eq!(s.burn_rate * s.budget_fraction, s.bad_fraction);
}

#[test]
fn zero_traffic_is_healthy_with_flag() {
    let slo = vault_slo(0.99, Duration::from_days(1));
    let store = TimeSeriesStore::new(Duration::from_days(2));
    let s = evaluate(&slo, &store.read(), DAY, Some(Duration::from_hours(1))).unwrap();
    assert_eq!(s.bad_fraction, 0.0);
    assert!(s.no_traffic && s.healthy);
    assert_eq!(s.current_burn_rate, Some(0.0));
}

#[test]
fn status_series_matches_brute_force() {
    let slo = vault_slo(0.995, Duration::from_hours(6));
    let trace = BurnTrace::new("vault", 5.0, 30_000).segment(4 * HOUR, 0.1).segment(5 * HOUR, 0.0).segment(9 * HOUR, 0.03);
    let samples = trace.samples(12 * HOUR);
    let store = store_of(samples.clone(), Duration::from_days(1));
    let reader = store.read();
    let mut t = 0;
    while t <= 12 * HOUR {
        let s = evaluate(&slo, &reader, t, None).unwrap();
        match brute_bad_fraction(&samples, t, slo.window) {
            None => assert!(s.no_traffic),
            Some(b) => {
                assert!((s.bad_fraction - b).abs() < 1e-12, "t={t}: {} vs {b}", s.bad_fraction);
                assert_eq!(s.burn_rate * s.budget_fraction, s.bad_fraction);
                assert_eq!(s.healthy, s.remaining_fraction > 0.0);
            }
        }
        t += 7 * MIN;
    }
}

#[test]
fn twenty_five_hours_to_exhaustion() {
    let budget = 0.001;
    let status = BudgetStatus {
        slo: "vault/availability".into(),
        evaluated_at: 1_000,
        window: Duration::from_days(30),
        bad_fraction: budget * 0.5,
        burn_rate: 14.4,
        budget_fraction: budget,
        consumed_fraction: 0.5,
        remaining_fraction: budget * 0.5,
        healthy: true,
        no_traffic: false,
        current_burn_rate: None,
    };
    let p = predict_exhaustion(&status, 1_000, PredictOptions::default()).unwrap();
    let hours = p.time_to_exhaustion_secs.unwrap() / 3600.0;
    assert!((hours - 25.0).abs() < 1e-9, "{hours}");
    assert!(!p.exhausts_within_horizon);
}

#[test]
fn zero_burn_never_exhausts() {
    let slo = vault_slo(0.99, Duration::from_days(1));
    let store = store_of(BurnTrace::new("vault", 10.0, MIN).samples(DAY), Duration::from_days(2));
    let s = evaluate(&slo, &store.read(), DAY, Some(Duration::from_hours(1))).unwrap();
    let p = predict_exhaustion(&s, DAY, PredictOptions::default()).unwrap();
    assert_eq!(p.time_to_exhaustion_secs, None);
    let json = serde_json::to_value(&p).unwrap();
    assert!(json["time_to_exhaustion_secs"].is_null());
}

#[test]
fn stale_status_rejected() {
    let slo = vault_slo(0.99, Duration::from_days(1));
    let store = TimeSeriesStore::new(Duration::from_days(2));
    let s = evaluate(&slo, &store.read(), 0, None).unwrap();
    let err = predict_exhaustion(&s, 10 * MIN, PredictOptions::default()).unwrap_err();
    assert!(matches!(err, MonitorError::StaleStatus { age_ms, .. } if age_ms == 10 * MIN));
}

/// Constant fault after a clean window: predicted exhaustion equals the first
/// unhealthy tick in replay, give or take one tick.
#[test]
fn prediction_matches_replay() {
    let window = Duration::from_days(7);
    let slo = vault_slo(0.99, window);
    let budget = 1.0 - slo.target;
    let t0 = 7 * DAY;
    let b = 0.1;
    let trace = BurnTrace::new("vault", 10.0, MIN).segment(t0, b);
    let store = store_of(trace.samples(t0 + DAY), Duration::from_days(9));
    let tick = Duration::from_mins(5);
    let opts = MonitorOptions { interval: tick, ..MonitorOptions::default() };
    let mut mon = Monitor::new(vec![slo.clone()], vec![], opts).unwrap();
    let mut sink = MemorySink::new();
    mon.run(&store, t0, 24 * 12, &mut sink);

    let recs = sink.records();
    let t1 = t0 + HOUR;
    let predicted = recs
        .iter()
        .find_map(|r| match r {
            SinkRecord::Prediction(p) if p.evaluated_at == t1 => p.time_to_exhaustion_secs,
            _ => None,
        })
        .map(|s| t1 + (s * 1000.0).round() as i64)
        .unwrap();
    let observed = recs
        .iter()
        .find_map(|r| match r {
            SinkRecord::Status(s) if !s.healthy => Some(s.evaluated_at),
            _ => None,
        })
        .unwrap();
    let analytic = t0 + (budget / b * window.as_millis() as f64).round() as i64;
    assert!((predicted - analytic).abs() <= 1_000, "{predicted} vs {analytic}");
    assert!((observed - predicted).abs() <= tick.as_millis_i64(), "observed {observed} predicted {predicted}");
}

fn gauge_rule(name: &str, expr: &str, for_duration: Duration) -> AlertRule {
    AlertRule {
        name: name.into(),
        slo: "svc/x".into(),
        expr: expr.into(),
        for_duration,
        severity: Severity::Page,
        burn_rate_threshold: 1.0,
        threshold_on_bad_fraction: 0.01,
        windows: (Duration::from_mins(5), Duration::from_mins(1)),
    }
}

#[test]
fn spike_is_pending_then_resolved() {
    let key = SeriesKey::metric("spike").unwrap();
    let store = TimeSeriesStore::new(Duration::from_days(1));
    store.ingest((0..20).map(|i| MetricSample::new(key.clone(), i * MIN, if i == 5 { 10.0 } else { 0.0 })));
    let rule = gauge_rule("spike-high", "spike > 5", Duration::from_mins(2));
    let mut tr = AlertTracker::new();
    let mut states = Vec::new();
    for i in 0..20 {
        let (a, e) = check_alerts(std::slice::from_ref(&rule), &store.read(), i * MIN, &mut tr);
        assert!(e.is_empty());
        states.extend(a.into_iter().map(|a| (i, a.state)));
    }
    assert_eq!(states, vec![(5, AlertState::Pending), (6, AlertState::Resolved)]);
}

#[test]
fn sustained_fast_burn_pages() {
    let slo = vault_slo(0.99, Duration::from_days(30));
    let rules = derive_alert_rules(&slo).unwrap();
    let fast = rules.iter().find(|r| r.burn_rate_threshold == 14.4).unwrap().clone();
    let t0 = 2 * HOUR;
    let trace = BurnTrace::new("vault", 10.0, MIN).segment(t0, 0.5);
    let store = store_of(trace.samples(t0 + 2 * HOUR), Duration::from_days(1));
    let mut tr = AlertTracker::new();
    let mut seen = Vec::new();
    let mut t = t0;
    while t <= t0 + 2 * HOUR {
        let (a, e) = check_alerts(std::slice::from_ref(&fast), &store.read(), t, &mut tr);
        assert!(e.is_empty());
        seen.extend(a.into_iter().map(|a| (a.state, a.fired_at, a.active_since)));
        t += MIN;
    }
    assert_eq!(seen.len(), 2, "{seen:?}");
    assert_eq!(seen[0].0, AlertState::Pending);
    assert_eq!(seen[1].0, AlertState::Firing);
    assert_eq!(seen[1].1 - seen[0].1, 2 * MIN);
    assert!(tr.is_firing(&fast.name));
}

#[test]
fn broken_query_is_isolated() {
    let good = vault_slo(0.99, Duration::from_hours(1));
    let mut broken = vault_slo(0.99, Duration::from_hours(1));
    broken.sli.name = "broken".into();
    broken.sli.total_query = "sum(rate(vault_requests_total[5m]) / on(nope) group_left".into();
    let store = store_of(BurnTrace::new("vault", 10.0, MIN).samples(2 * HOUR), Duration::from_days(1));
    let mut mon = Monitor::new(vec![broken, good.clone()], vec![], MonitorOptions::default()).unwrap();
    let mut sink = MemorySink::new();
    let ticks = 5;
    let sums = mon.run(&store, HOUR, ticks, &mut sink);
    assert!(sums.iter().all(|s| s.statuses == 1 && s.errors == 1));
    let recs = sink.records();
    let ok = recs.iter().filter(|r| matches!(r, SinkRecord::Status(s) if s.slo == good.id())).count();
    let errs = recs.iter().filter(|r| matches!(r, SinkRecord::Error { slo, .. } if slo == "vault/broken")).count();
    assert_eq!((ok, errs), (ticks as usize, ticks as usize));
}

#[test]
fn empty_set_emits_heartbeats() {
    let store = TimeSeriesStore::new(Duration::from_days(1));
    let mut mon = Monitor::new(vec![], vec![], MonitorOptions::default()).unwrap();
    let mut sink = MemorySink::new();
    mon.run(&store, 0, 4, &mut sink);
    let recs = sink.records();
    assert_eq!(recs.len(), 4);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(*r, SinkRecord::Heartbeat { at: i as i64 * 60_000, tick: i as u64 + 1, slos: 0 });
    }
}

#[test]
fn interval_below_one_second_rejected() {
    let opts = MonitorOptions { interval: Duration::from_millis(999), ..MonitorOptions::default() };
    assert!(matches!(Monitor::new(vec![], vec![], opts), Err(MonitorError::Config(_))));
}

#[test]
fn record_counts_reconcile_and_store_untouched() {
    let slos = vec![vault_slo(0.99, Duration::from_hours(6)), vault_slo(0.999, Duration::from_hours(6))];
    let mut slos = slos;
    slos[1].sli.name = "availability-strict".into();
    let rules: Vec<AlertRule> = slos.iter().flat_map(|s| derive_alert_rules(s).unwrap()).collect();
    let trace = BurnTrace::new("vault", 10.0, MIN).segment(8 * HOUR, 0.2);
    let store = store_of(trace.samples(10 * HOUR), Duration::from_days(4));
    let before = store.dump();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("monitor.jsonl");
    let mem = MemorySink::new();
    let mut sink = FanoutSink::new().with(mem.clone()).with(JsonlSink::create(&path).unwrap());
    let mut mon = Monitor::new(slos.clone(), rules, MonitorOptions::default()).unwrap();
    let ticks = 120;
    let sums = mon.run(&store, 8 * HOUR, ticks, &mut sink);

    let recs = mem.records();
    let count = |f: fn(&SinkRecord) -> bool| recs.iter().filter(|r| f(r)).count();
    assert_eq!(count(|r| matches!(r, SinkRecord::Status(_))), ticks as usize * slos.len());
    assert_eq!(count(|r| matches!(r, SinkRecord::Prediction(_))), ticks as usize * slos.len());
    assert_eq!(count(|r| matches!(r, SinkRecord::Heartbeat { .. })), ticks as usize);
    assert_eq!(count(|r| matches!(r, SinkRecord::Alert(_))), sums.iter().map(|s| s.alerts).sum::<usize>());
    assert!(count(|r| matches!(r, SinkRecord::Alert(a) if a.state == AlertState::Firing)) > 0);

    let lines: Vec<SinkRecord> =
        std::fs::read_to_string(&path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, recs);

    let after: Vec<_> = store.dump().into_iter().filter(|s| !s.series.metric_name.starts_with(RESERVED_PREFIX)).collect();
    assert_eq!(before, after);
    let beats = store.dump().into_iter().filter(|s| s.series.metric_name == HEARTBEAT_METRIC).count();
    assert_eq!(beats, ticks as usize);
}

#[test]
fn webhook_body_shape() {
    let a = Alert {
        rule: "vault-availability-burn-14.4-1h".into(),
        slo: "vault/availability".into(),
        severity: Severity::Page,
        state: AlertState::Firing,
        fired_at: 120_000,
        active_since: 0,
        value: 0.5,
    };
    let body = WebhookSink::body(&a);
    assert_eq!(body["alert"], "vault-availability-burn-14.4-1h");
    assert_eq!(body["severity"], "page");
    assert_eq!(body["state"], "firing");
    assert_eq!(body["fired_at"], 120_000);
}

#[test]
fn webhook_posts_firing_only() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/hook", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        let mut req = server.recv().unwrap();
        let mut body = String::new();
        req.as_reader().read_to_string(&mut body).unwrap();
        req.respond(tiny_http::Response::empty(200)).unwrap();
        body
    });
    let mut sink = WebhookSink::new(&url, Duration::from_secs(5));
    let mut a = Alert {
        rule: "r".into(),
        slo: "s/x".into(),
        severity: Severity::Ticket,
        state: AlertState::Pending,
        fired_at: 0,
        active_since: 0,
        value: 1.0,
    };
    sink.emit(&SinkRecord::Alert(a.clone())).unwrap();
    a.state = AlertState::Firing;
    sink.emit(&SinkRecord::Alert(a.clone())).unwrap();
    let got: serde_json::Value = serde_json::from_str(&handle.join().unwrap()).unwrap();
    assert_eq!(got, WebhookSink::body(&a));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Transitions per rule follow pending -> firing? -> resolved with no repeats.
    #[test]
    fn alert_state_machine_is_well_formed(values in proptest::collection::vec(0u8..2, 1..60), for_mins in 0u64..4) {
        let key = SeriesKey::metric("flag").unwrap();
        let store = TimeSeriesStore::new(Duration::from_days(1));
        store.ingest(values.iter().enumerate().map(|(i, v)| MetricSample::new(key.clone(), i as i64 * MIN, *v as f64)));
        let rule = gauge_rule("flag", "flag > 0", Duration::from_mins(for_mins));
        let mut tr = AlertTracker::new();
        let mut last: Option<AlertState> = None;
        for i in 0..values.len() as i64 {
            let (alerts, _) = check_alerts(std::slice::from_ref(&rule), &store.read(), i * MIN, &mut tr);
            for a in alerts {
                let ok = matches!(
                    (last, a.state),
                    (None | Some(AlertState::Resolved), AlertState::Pending)
                        | (Some(AlertState::Pending), AlertState::Firing | AlertState::Resolved)
                        | (Some(AlertState::Firing), AlertState::Resolved)
                );
                prop_assert!(ok, "{:?} -> {:?}", last, a.state);
                if a.state == AlertState::Firing {
                    prop_assert!(a.fired_at - a.active_since >= (for_mins * 60_000) as i64);
                }
                last = Some(a.state);
            }
        }
    }

    #[test]
    fn burn_times_budget_is_bad_fraction(frac in 0.0f64..0.5, target in 0.9f64..0.9999) {
        let slo = vault_slo(target, Duration::from_hours(1));
        let trace = BurnTrace::new("vault", 7.0, MIN).segment(-1, frac);
        let store = store_of(trace.samples(2 * HOUR), Duration::from_days(1));
        let s = evaluate(&slo, &store.read(), 2 * HOUR, Some(Duration::from_mins(5))).unwrap();
        prop_assert_eq!(s.burn_rate * s.budget_fraction, s.bad_fraction);
        prop_assert_eq!(s.healthy, s.remaining_fraction > 0.0);
    }
}
