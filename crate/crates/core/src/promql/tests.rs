use super::*;
use crate::duration::Duration;
use crate::metrics::{MetricSample, SeriesKey, TimeSeriesStore};

fn store_with(samples: &[(&str, &[(&str, &str)], i64, f64)]) -> TimeSeriesStore {
    let store = TimeSeriesStore::default();
    for (name, labels, t, v) in samples {
        let key = SeriesKey::new(*name, labels.iter().copied()).unwrap();
        let r = store.ingest([MetricSample::new(key, *t, *v)]);
        assert_eq!(r.accepted, 1);
    }
    store
}

fn instant(q: &str, t: i64, store: &TimeSeriesStore) -> QueryValue {
    eval_instant(&parse(q).unwrap(), t, store).unwrap()
}

#[test]
fn parses_sum_of_rate() {
    let e = parse(r#"sum(rate(http_requests_total{code=~"5.."}[5m]))"#).unwrap();
    let Expr::Aggregate { op: AggregateOp::Sum, grouping: None, arg } = e else { panic!("{e:?}") };
    let Expr::Call { func: Function::Rate, args } = *arg else { panic!() };
    let Expr::Range { selector, window } = &args[0] else { panic!() };
    assert_eq!(*window, Duration::from_secs(300));
    assert_eq!(selector.metric_name.as_deref(), Some("http_requests_total"));
    assert_eq!(selector.matchers[0].value, "5..");
}

#[test]
fn parses_p99_latency_query() {
    let e = parse("histogram_quantile(0.99, sum by (le) (rate(latency_bucket[5m])))").unwrap();
    let Expr::Call { func: Function::HistogramQuantile, args } = e else { panic!() };
    assert_eq!(args[0], Expr::Number(0.99));
    assert!(matches!(&args[1], Expr::Aggregate { grouping: Some(g), .. } if g.labels == vec!["le".to_string()]));
}

#[test]
fn unclosed_range_points_at_paren() {
    let errs = parse("rate(x[5m)").unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].span.0, 9);
    assert_eq!(errs[0].severity, Severity::Error);
}

#[test]
fn type_errors_at_parse() {
    assert!(parse("rate(x)").is_err());
    assert!(parse("sum(x[5m])").is_err());
    assert!(parse("x[5m] + 1").is_err());
    assert!(parse("1 > 2").is_err());
    assert!(parse("1 > bool 2").is_ok());
    assert!(parse("histogram_quantile(x, y)").is_err());
    assert!(parse("foo(x)").is_err());
    assert!(parse("{}").is_err());
    assert!(parse(r#"{code="200"}"#).is_ok());
    assert!(parse("1 + bool 2").is_err());
}

#[test]
fn grouping_after_arguments() {
    let a = parse("sum(x) by (a, b)").unwrap();
    let b = parse("sum by (a, b) (x)").unwrap();
    assert_eq!(a, b);
}

#[test]
fn precedence() {
    let e = parse("a + b * c > 1 and d").unwrap();
    let Expr::Binary { op: BinaryOp::And, lhs, .. } = e else { panic!() };
    let Expr::Binary { op: BinaryOp::Gt, lhs, .. } = *lhs else { panic!() };
    let Expr::Binary { op: BinaryOp::Add, rhs, .. } = *lhs else { panic!() };
    assert!(matches!(*rhs, Expr::Binary { op: BinaryOp::Mul, .. }));
    // left associativity
    let e = parse("a - b - c").unwrap();
    let Expr::Binary { lhs, .. } = e else { panic!() };
    assert!(matches!(*lhs, Expr::Binary { op: BinaryOp::Sub, .. }));
}

#[test]
fn validate_examples() {
    let ratio = r#"sum(rate(vault_requests_total{path="/api/secrets",code!~"5.."}[30d])) / sum(rate(vault_requests_total{path="/api/secrets"}[30d]))"#;
    assert_eq!(validate(ratio), Ok(vec![]));
    let errs = validate("histogram_quantile(2, v)").unwrap_err();
    assert!(errs[0].message.contains("outside [0, 1]"));
    let warns = validate("rate(gauge_metric[5m])").unwrap();
    assert_eq!(warns.len(), 1);
    assert_eq!(warns[0].severity, Severity::Warning);
    assert!(parse("histogram_quantile(2, v)").is_ok());
}

#[test]
fn spans_lie_within_source() {
    for q in ["rate(x[5m)", "sum(", "x{a=1}", "x{a=\"b\"", "\"abc", "x @ 5", "histogram_quantile(2, v)", ""] {
        let d = match validate(q) {
            Ok(w) => w,
            Err(e) => e,
        };
        for diag in d {
            assert!(diag.span.0 <= diag.span.1 && diag.span.1 <= q.len(), "{q}: {diag:?}");
        }
    }
}

#[test]
fn pretty_print_reparses() {
    let corpus = [
        r#"sum(rate(http_requests_total{code=~"5.."}[5m]))"#,
        "histogram_quantile(0.99, sum by (le) (rate(latency_bucket[5m])))",
        "sum without (instance) (x) / count(x)",
        "-(a - b) * 2",
        "a > bool 3",
        r#"(1 - (sum(rate(m{code!~"5.."}[1h])) / sum(rate(m[1h])))) / (1 - 0.99) > 14.4 and (1 - (sum(rate(m{code!~"5.."}[5m])) / sum(rate(m[5m])))) / (1 - 0.99) > 14.4"#,
        r#"clamp_max(x{a="q\"uote\\"}, 1e-7)"#,
        "increase(c[90s]) >= 10",
        "avg(min(x) by (a))",
    ];
    for q in corpus {
        let e = parse(q).unwrap();
        let printed = e.to_string();
        assert_eq!(parse(&printed).unwrap(), e, "{q} -> {printed}");
    }
}

#[test]
fn rate_of_linear_counter() {
    let s = store_with(&[("c", &[], 0, 0.0), ("c", &[], 60_000, 60.0)]);
    assert_eq!(instant("rate(c[60s])", 60_000, &s).single(), Some(1.0));
}

#[test]
fn increase_with_reset() {
    let s = store_with(&[("c", &[], 0, 10.0), ("c", &[], 30_000, 4.0)]);
    assert_eq!(instant("increase(c[60s])", 30_000, &s).single(), Some(4.0));
}

#[test]
fn histogram_quantile_upper_bound_of_bucket() {
    let s = store_with(&[
        ("b", &[("le", "0.1")], 0, 50.0),
        ("b", &[("le", "1")], 0, 90.0),
        ("b", &[("le", "+Inf")], 0, 100.0),
    ]);
    assert_eq!(instant("histogram_quantile(0.5, b)", 0, &s).single(), Some(0.1));
    // cross-check by inverting the piecewise-linear CDF on a fine grid
    let cdf = |x: f64| if x <= 0.1 { 500.0 * x } else { 50.0 + 40.0 * (x - 0.1) / 0.9 };
    let inverted = (0..=100_000).map(|i| i as f64 / 100_000.0).find(|&x| cdf(x) >= 50.0 - 1e-9).unwrap();
    assert!((inverted - 0.1).abs() < 1e-5);
}

#[test]
fn staleness_lookback() {
    let s = store_with(&[("g", &[], 0, 1.0)]);
    assert_eq!(instant("g", 299_999, &s).single(), Some(1.0));
    assert_eq!(instant("g", 300_000, &s), QueryValue::Vector(vec![]));
}

#[test]
fn eval_range_constant_gauge() {
    let s = store_with(&[("g", &[], 0, 5.0), ("g", &[], 30_000, 5.0), ("g", &[], 60_000, 5.0)]);
    let m = eval_range(&parse("g").unwrap(), 0, 60_000, Duration::from_secs(30), &s).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.values().next().unwrap(), &vec![(0, 5.0), (30_000, 5.0), (60_000, 5.0)]);
    let empty = eval_range(&parse("g").unwrap(), 0, 60_000, Duration::from_secs(30), &TimeSeriesStore::default()).unwrap();
    assert!(empty.is_empty());
    assert!(eval_range(&parse("g").unwrap(), 10, 0, Duration::from_secs(1), &s).is_err());
}

#[test]
fn vector_matching_drops_name() {
    let s = store_with(&[
        ("a", &[("x", "1")], 0, 6.0),
        ("b", &[("x", "1")], 0, 3.0),
        ("b", &[("x", "2")], 0, 1.0),
    ]);
    let v = instant("a / b", 0, &s);
    assert_eq!(v, QueryValue::Vector(vec![(SeriesKey::unnamed([("x".into(), "1".into())].into()), 2.0)]));
    let f = instant("b > 2", 0, &s);
    assert_eq!(f.as_vector().unwrap().len(), 1);
    let b = instant("b > bool 2", 0, &s);
    assert_eq!(b.as_vector().unwrap().iter().map(|x| x.1).collect::<Vec<_>>(), vec![1.0, 0.0]);
    let and = instant("b and a", 0, &s);
    assert_eq!(and.as_vector().unwrap().len(), 1);
}

#[test]
fn nan_excluded_from_aggregation() {
    let s = store_with(&[
        ("g", &[("k", "a")], 0, f64::NAN),
        ("g", &[("k", "b")], 0, 2.0),
        ("h", &[("k", "a")], 0, f64::NAN),
    ]);
    assert_eq!(instant("sum(g)", 0, &s).single(), Some(2.0));
    assert_eq!(instant("sum by (k) (h)", 0, &s), QueryValue::Vector(vec![]));
}

#[test]
fn window_substitution() {
    let e = parse("sum(rate(m[30d])) / sum(rate(m[30d]))").unwrap();
    let w = e.with_range_window(Duration::from_hours(1));
    assert_eq!(w.to_string(), "sum(rate(m[1h])) / sum(rate(m[1h]))");
}
