use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ledger::{Network, NetworkConfig};
use crate::metrics::{MetricSample, SeriesKey, TimeSeriesStore};
use crate::Duration;

fn synthetic(seed: u64, n: usize, d: usize) -> LocalDataset {
    // Label depends on feature 0 only; the rest is noise.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let features: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let label = if features[0] > 0.6 { 1.0 } else { 0.0 };
            Row { features, label }
        })
        .collect();
    LocalDataset::new("p", rows)
}

fn gauge_store(points: &[(i64, f64)]) -> TimeSeriesStore {
    let store = TimeSeriesStore::new(Duration::from_days(7));
    let key = SeriesKey::metric("g").unwrap();
    store.ingest(points.iter().map(|(t, v)| MetricSample::new(key.clone(), *t, *v)));
    // A traffic counter so the label rule always has a total.
    let req = SeriesKey::metric("svc_requests_total").unwrap().with_label("code", "200");
    store.ingest(points.iter().map(|(t, _)| MetricSample::new(req.clone(), *t, *t as f64)));
    store
}

fn gauge_spec(query: &str) -> FeatureSpec {
    FeatureSpec {
        candidates: vec![Candidate { name: "g".into(), query: query.into() }],
        window: Duration::from_secs(60),
        step: Duration::from_secs(5),
        normalization: None,
    }
}

#[test]
fn constant_metric_has_zero_slope() {
    let pts: Vec<(i64, f64)> = (0..=60).map(|i| (i * 5_000, 42.0)).collect();
    let store = gauge_store(&pts);
    let rule = LabelRule::for_service("svc", Duration::from_mins(1));
    let d = featurize_raw(&store, &gauge_spec("g"), &rule, &[300_000], "p").unwrap();
    assert_eq!(d.rows[0].features, vec![42.0, 0.0]);
}

#[test]
fn rising_rate_has_positive_slope() {
    // Counter whose per-second increase grows linearly.
    let store = TimeSeriesStore::new(Duration::from_days(7));
    let key = SeriesKey::metric("c_total").unwrap();
    let mut v = 0.0;
    let mut samples = Vec::new();
    for i in 0..=120i64 {
        v += i as f64;
        samples.push(MetricSample::new(key.clone(), i * 5_000, v));
    }
    store.ingest(samples);
    let req = SeriesKey::metric("svc_requests_total").unwrap();
    store.ingest((0..=120i64).map(|i| MetricSample::new(req.clone(), i * 5_000, i as f64)));
    let rule = LabelRule::for_service("svc", Duration::from_mins(1));
    let d = featurize_raw(&store, &gauge_spec("rate(c_total[30s])"), &rule, &[600_000], "p").unwrap();
    assert!(d.rows[0].features[1] > 0.0);
}

#[test]
fn slope_matches_closed_form_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<(i64, f64)> = (0..=60).map(|i| (i * 5_000, 10.0 + 0.5 * (i * 5) as f64 + rng.gen_range(-1.0..1.0))).collect();
    let store = gauge_store(&pts);
    let rule = LabelRule::for_service("svc", Duration::from_mins(1));
    let t = 300_000;
    let d = featurize_raw(&store, &gauge_spec("g"), &rule, &[t], "p").unwrap();
    // Oracle: slope = (nΣxy − ΣxΣy) / (nΣx² − (Σx)²) over the window's points.
    let win: Vec<(f64, f64)> = pts.iter().filter(|(ts, _)| *ts > t - 60_000 && *ts <= t).map(|(ts, v)| (*ts as f64 / 1000.0, *v)).collect();
    let n = win.len() as f64;
    let sx: f64 = win.iter().map(|p| p.0).sum();
    let sy: f64 = win.iter().map(|p| p.1).sum();
    let sxy: f64 = win.iter().map(|p| p.0 * p.1).sum();
    let sxx: f64 = win.iter().map(|p| p.0 * p.0).sum();
    let oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert_eq!(win.len(), 12);
    assert!((d.rows[0].features[1] - oracle).abs() < 1e-9, "{} vs {oracle}", d.rows[0].features[1]);
    assert!((oracle - 0.5).abs() < 0.2);
}

#[test]
fn missing_metric_rows_are_skipped() {
    let pts: Vec<(i64, f64)> = (0..=20).map(|i| (i * 5_000, 1.0)).collect();
    let store = gauge_store(&pts);
    let rule = LabelRule::for_service("svc", Duration::from_mins(1));
    let d = featurize_raw(&store, &gauge_spec("g"), &rule, &[50_000, 10_000_000], "p").unwrap();
    assert_eq!((d.len(), d.skipped), (1, 1));
    let err = featurize_raw(&store, &gauge_spec("absent"), &rule, &[50_000], "p").unwrap_err();
    assert_eq!(err, FlError::EmptyDataset { skipped: 1 });
}

#[test]
fn label_rule_thresholds() {
    let store = TimeSeriesStore::new(Duration::from_days(7));
    let ok = SeriesKey::metric("svc_requests_total").unwrap().with_label("code", "200");
    let bad = SeriesKey::metric("svc_requests_total").unwrap().with_label("code", "503");
    // 3% errors from t=600s on.
    for i in 0..=240i64 {
        let t = i * 5_000;
        let bad_total = if t > 600_000 { (t - 600_000) as f64 / 1000.0 * 0.3 } else { 0.0 };
        store.ingest([MetricSample::new(ok.clone(), t, t as f64 / 1000.0 * 9.7), MetricSample::new(bad.clone(), t, bad_total)]);
    }
    let rule = LabelRule::for_service("svc", Duration::from_mins(1));
    let spec = FeatureSpec {
        candidates: vec![Candidate { name: "req".into(), query: "sum(rate(svc_requests_total[1m]))".into() }],
        window: Duration::from_mins(1),
        step: Duration::from_secs(15),
        normalization: None,
    };
    let d = featurize_raw(&store, &spec, &rule, &[300_000, 1_000_000], "p").unwrap();
    assert_eq!(d.rows.iter().map(|r| r.label).collect::<Vec<_>>(), vec![0.0, 1.0]);
}

#[test]
fn normalization_maps_training_range_to_unit() {
    let d = synthetic(1, 50, 3);
    let n = Normalization::fit(&d);
    let nd = d.normalized(&n);
    for k in 0..3 {
        let col: Vec<f64> = nd.rows.iter().map(|r| r.features[k]).collect();
        assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }
}

#[test]
fn param_layout_length() {
    assert_eq!(param_len(4, 8), 5 * 8 + 9);
    let p = ModelParams::init(4, 8, 1);
    assert_eq!(p.len(), 49);
    assert!(p.0.iter().all(|x| (-0.5..=0.5).contains(x)));
    assert_eq!(p.hidden_for(4).unwrap(), 8);
    assert!(p.hidden_for(5).is_err());
}

#[test]
fn zero_epochs_is_identity() {
    let d = synthetic(2, 20, 2);
    let p = ModelParams::init(2, 4, 9);
    let (q, l) = local_train(&p, &d, TrainConfig { epochs: 0, lr: 0.1 }).unwrap();
    assert_eq!(q, p);
    assert_eq!(l, loss(&p, &d).unwrap());
}

#[test]
fn separable_two_points_descend() {
    let d = LocalDataset::new("p", vec![Row { features: vec![0.0], label: 0.0 }, Row { features: vec![1.0], label: 1.0 }]);
    let p = ModelParams::init(1, 4, 5);
    let (_, l) = local_train(&p, &d, TrainConfig { epochs: 500, lr: 0.5 }).unwrap();
    assert!(l < loss(&p, &d).unwrap());
}

#[test]
fn non_finite_training_aborts() {
    let d = LocalDataset::new("p", vec![Row { features: vec![f64::INFINITY], label: 1.0 }]);
    let p = ModelParams::init(1, 2, 5);
    assert!(matches!(local_train(&p, &d, TrainConfig { epochs: 5, lr: 0.1 }), Err(FlError::NonFinite { .. })));
    assert!(matches!(local_train(&p, &d, TrainConfig { epochs: 1, lr: 0.0 }), Err(FlError::InvalidConfig(_))));
}

pub(crate) fn max_fd_error(seed: u64) -> f64 {
    let d = synthetic(seed, 5, 3);
    let p = ModelParams::init(3, 4, seed + 100);
    let g = gradient(&p, &d).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi.0[k] += eps;
        lo.0[k] -= eps;
        let fd = (loss(&hi, &d).unwrap() - loss(&lo, &d).unwrap()) / (2.0 * eps);
        let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..10 {
        let e = max_fd_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn thousand_iterations_halve_loss() {
    let d = synthetic(4, 200, 4);
    let p = ModelParams::init(4, DEFAULT_HIDDEN, 7);
    let initial = loss(&p, &d).unwrap();
    let (_, l) = local_train(&p, &d, TrainConfig { epochs: 1000, lr: 1.0 }).unwrap();
    assert!(l < 0.5 * initial, "{l} vs {initial}");
}

fn upd(peer: &str, p: Vec<f64>, n: u64) -> ModelUpdate {
    ModelUpdate { round: 0, peer: peer.into(), params: ModelParams(p), sample_count: n, train_loss: 0.25 }
}

#[test]
fn weighted_mean_examples() {
    assert_eq!(aggregate(&[upd("a", vec![2.0, 4.0], 1), upd("b", vec![4.0, 8.0], 3)]).unwrap().0, vec![3.5, 7.0]);
    let single = upd("a", vec![0.1, -0.3, 1e-17], 7);
    assert_eq!(aggregate(&[single.clone()]).unwrap(), single.params);
    assert_eq!(aggregate(&[]), Err(FlError::NoUpdates));
    assert!(matches!(aggregate(&[upd("a", vec![1.0], 1), upd("b", vec![1.0, 2.0], 1)]), Err(FlError::DimensionMismatch { .. })));
}

#[test]
fn aggregate_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ups: Vec<ModelUpdate> =
        (0..5).map(|i| upd(&format!("p{i}"), (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(1..50))).collect();
    let got = aggregate(&ups).unwrap();
    let total: u64 = ups.iter().map(|u| u.sample_count).sum();
    for k in 0..9 {
        let oracle: f64 = ups.iter().map(|u| u.sample_count as f64 * u.params.0[k]).sum::<f64>() / total as f64;
        assert!((got.0[k] - oracle).abs() < 1e-12);
    }
}

#[test]
fn update_payload_uses_17_digit_strings() {
    let u = upd("p0", vec![0.1, -2.5], 3);
    let s = crate::canonical::to_string(&u).unwrap();
    assert_eq!(s, r#"{"params":["1.0000000000000001e-1","-2.5000000000000000e0"],"peer":"p0","round":0,"sample_count":3,"train_loss":"2.5000000000000000e-1"}"#);
    let back: ModelUpdate = crate::canonical::from_slice(s.as_bytes()).unwrap();
    assert_eq!(back, u);
}

fn shards(k: usize, same: bool) -> Vec<Shard> {
    (0..k).map(|i| Shard { peer: i, data: if same { synthetic(42, 40, 2) } else { synthetic(42 + i as u64, 40 + 10 * i, 2) }, silent: false }).collect()
}

fn cfg(round: u64) -> RoundConfig {
    RoundConfig { round, train: TrainConfig { epochs: 50, lr: 0.5 }, hidden: 4, ..RoundConfig::default() }
}

#[test]
fn punctual_round_identical_on_all_peers() {
    let mut net = Network::new(NetworkConfig { peer_count: 3, ..NetworkConfig::default() }, 0).unwrap();
    let out = run_round(&mut net, &cfg(0), &shards(3, false)).unwrap();
    assert_eq!(out.included.len(), 3);
    for p in net.peers() {
        let fr = &p.state().fl_rounds[&0];
        assert_eq!(fr.aggregate.as_ref().unwrap().0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), out.aggregate.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
    // A second round starts from the first aggregate.
    let out2 = run_round(&mut net, &cfg(1), &shards(3, false)).unwrap();
    assert_eq!(net.peer(2).state().fl_rounds[&1].base_params, out.aggregate);
    assert_ne!(out2.aggregate, out.aggregate);
}

#[test]
fn silent_peer_excluded_identically() {
    let mut net = Network::new(NetworkConfig { peer_count: 3, ..NetworkConfig::default() }, 0).unwrap();
    let mut s = shards(3, false);
    s[1].silent = true;
    let out = run_round(&mut net, &cfg(0), &s).unwrap();
    assert_eq!(out.included, vec!["peer-0", "peer-2"]);
    assert_eq!(out.excluded, vec!["peer-1"]);
    assert!(net.chains_identical());
}

#[test]
fn all_silent_stalls() {
    let mut net = Network::new(NetworkConfig { peer_count: 2, ..NetworkConfig::default() }, 0).unwrap();
    let mut s = shards(2, false);
    s.iter_mut().for_each(|x| x.silent = true);
    assert_eq!(run_round(&mut net, &cfg(0), &s), Err(FlError::RoundStalled(0)));
}

#[test]
fn identical_shards_equal_central_training() {
    for k in [2, 3, 5] {
        let mut net = Network::new(NetworkConfig { peer_count: k, ..NetworkConfig::default() }, 0).unwrap();
        let s = shards(k, true);
        let c = cfg(0);
        let out = run_round(&mut net, &c, &s).unwrap();
        let init = ModelParams::init(2, c.hidden, c.init_seed);
        let (central, _) = local_train(&init, &s[0].data, c.train).unwrap();
        assert_eq!(out.aggregate.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), central.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn ranking_prefers_signal_metric() {
    let d = synthetic(5, 300, 4);
    let p = ModelParams::init(4, DEFAULT_HIDDEN, 1);
    let (p, _) = local_train(&p, &d, TrainConfig { epochs: 800, lr: 1.0 }).unwrap();
    let r = rank_sli(&p, &d, &["a".into(), "b".into()]).unwrap();
    assert_eq!(r[0].0, "a");
    assert!(r[0].1 > r[1].1);
}

#[test]
fn single_candidate_ranks_first() {
    let d = synthetic(6, 30, 2);
    let p = ModelParams::init(2, 4, 1);
    let r = rank_sli(&p, &d, &["only".into()]).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].0, "only");
}

#[test]
fn constant_feature_has_zero_importance() {
    let mut d = synthetic(7, 50, 4);
    for r in &mut d.rows {
        r.features[2] = 0.3;
        r.features[3] = 0.0;
    }
    let p = ModelParams::init(4, 4, 2);
    let r = rank_sli(&p, &d, &["a".into(), "c".into()]).unwrap();
    let c = r.iter().find(|x| x.0 == "c").unwrap();
    assert_eq!(c.1, 0.0);
}

#[test]
fn ranking_invariant_to_column_order() {
    let d = synthetic(8, 200, 6);
    let p = ModelParams::init(6, 6, 2);
    let (p, _) = local_train(&p, &d, TrainConfig { epochs: 300, lr: 1.0 }).unwrap();
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let r1 = rank_sli(&p, &d, &names).unwrap();
    // Swap metric blocks 0 and 2 in both data and first-layer weights.
    let mut d2 = d.clone();
    for r in &mut d2.rows {
        r.features.swap(0, 4);
        r.features.swap(1, 5);
    }
    let mut p2 = p.clone();
    let (dd, h) = (6, 6);
    for j in 0..h {
        p2.0.swap(j * dd, j * dd + 4);
        p2.0.swap(j * dd + 1, j * dd + 5);
    }
    let r2 = rank_sli(&p2, &d2, &["z".into(), "y".into(), "x".into()]).unwrap();
    assert_eq!(r1.iter().map(|x| &x.0).collect::<Vec<_>>(), r2.iter().map(|x| &x.0).collect::<Vec<_>>());
    for (a, b) in r1.iter().zip(&r2) {
        assert!((a.1 - b.1).abs() < 1e-12);
    }
}

#[test]
fn zero_weights_predict_half() {
    assert_eq!(predict_violation(&ModelParams::zeros(3, 4), &[0.2, 5.0, -1.0]).unwrap(), 0.5);
    assert!(predict_violation(&ModelParams::zeros(3, 4), &[0.2]).is_err());
}

#[test]
fn positive_weight_model_is_monotone() {
    // d=1, h=1: W1=2, b1=0, W2=3, b2=-1.
    let p = ModelParams(vec![2.0, 0.0, 3.0, -1.0]);
    let mut last = 0.0;
    for i in 0..20 {
        let y = predict_violation(&p, &[i as f64 * 0.3 - 3.0]).unwrap();
        assert!(y > last && y < 1.0);
        last = y;
    }
}

#[test]
fn held_out_auc() {
    let train = synthetic(9, 300, 4);
    let test = synthetic(10, 200, 4);
    let p = ModelParams::init(4, DEFAULT_HIDDEN, 3);
    let (p, _) = local_train(&p, &train, TrainConfig { epochs: 1000, lr: 1.0 }).unwrap();
    assert!(auc(&p, &test).unwrap() > 0.9);
}

#[test]
fn dataset_csv_round_trip() {
    let d = synthetic(12, 10, 3);
    let back = LocalDataset::from_csv("p", &d.to_csv()).unwrap();
    assert_eq!(back.rows, d.rows);
    assert!(LocalDataset::from_csv("p", "f0,label\n1,2\n").is_err());
}

mod props {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    proptest! {
        #[test]
        fn aggregate_order_independent(seed in 0u64..1000, n in 1usize..6, rot in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ups: Vec<ModelUpdate> = (0..n).map(|i| upd(&format!("p{i}"), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(1..20))).collect();
            let mut shuffled = ups.clone();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let a = aggregate(&ups).unwrap();
            let b = aggregate(&shuffled).unwrap();
            prop_assert_eq!(a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn identical_updates_aggregate_exactly(seed in 0u64..1000, n in 1usize..6) {
            let p = ModelParams::init(3, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ups: Vec<ModelUpdate> = (0..n).map(|i| ModelUpdate { round: 0, peer: format!("p{i}"), params: p.clone(), sample_count: rng.gen_range(1..100), train_loss: 0.0 }).collect();
            prop_assert_eq!(aggregate(&ups).unwrap(), p);
        }

        #[test]
        fn params_round_trip_through_payload(v in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let p = ModelParams(v);
            let s = crate::canonical::to_vec(&p).unwrap();
            prop_assert_eq!(crate::canonical::from_slice::<ModelParams>(&s).unwrap(), p);
        }
    }
}
