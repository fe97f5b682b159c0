use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use super::series::{MetricSample, SeriesKey, SeriesMatcher, Timestamp};
use super::snapshot;
use super::MetricsError;
use crate::duration::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    NegativeTimestamp,
    DuplicateTimestamp,
    OutOfOrder,
    TooOld,
    InvalidSeries,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<(MetricSample, RejectReason)>,
}

impl IngestReport {
    pub fn merge(&mut self, other: IngestReport) {
        self.accepted += other.accepted;
        self.rejected.extend(other.rejected);
    }
}

#[derive(Default)]
struct Inner {
    series: BTreeMap<SeriesKey, Vec<(Timestamp, f64)>>,
    head: Option<Timestamp>,
}

/// In-memory time-series store.
///
/// Writers hold the lock for a whole batch, so a reader never observes half
/// of an ingest call. Samples per series are strictly increasing in time;
/// anything else is rejected at ingestion.
pub struct TimeSeriesStore {
    inner: RwLock<Inner>,
    retention: Duration,
    snapshot: Option<Mutex<BufWriter<File>>>,
}

impl Default for TimeSeriesStore {
    fn default() -> Self {
        Self::new(Duration::from_days(7))
    }
}

impl TimeSeriesStore {
    pub fn new(retention: Duration) -> Self {
        TimeSeriesStore { inner: RwLock::new(Inner::default()), retention, snapshot: None }
    }

    /// Open (or create) an append-only snapshot file; existing records are
    /// replayed into the store and new accepted samples are appended.
    pub fn with_snapshot(retention: Duration, path: &Path) -> Result<Self, MetricsError> {
        let mut store = Self::new(retention);
        if path.exists() {
            let samples = snapshot::read_snapshot(path)?;
            store.ingest(samples);
        }
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = BufWriter::new(file);
        if fresh {
            snapshot::write_header(&mut w)?;
        }
        w.flush()?;
        store.snapshot = Some(Mutex::new(w));
        Ok(store)
    }

    pub fn retention(&self) -> Duration {
        self.retention
    }

    pub fn ingest<I: IntoIterator<Item = MetricSample>>(&self, samples: I) -> IngestReport {
        let mut report = IngestReport::default();
        let mut accepted = Vec::new();
        {
            let mut inner = self.inner.write().expect("store lock poisoned");
            for sample in samples {
                match inner.try_insert(&sample, self.retention) {
                    Ok(()) => {
                        report.accepted += 1;
                        if self.snapshot.is_some() {
                            accepted.push(sample);
                        }
                    }
                    Err(reason) => report.rejected.push((sample, reason)),
                }
            }
        }
        if let Some(snap) = &self.snapshot {
            let mut w = snap.lock().expect("snapshot lock poisoned");
            for s in &accepted {
                if let Err(e) = snapshot::write_record(&mut *w, s) {
                    log::error!("snapshot append failed: {e}");
                }
            }
            let _ = w.flush();
        }
        report
    }

    /// A consistent read view; ingestion waits until it is dropped.
    pub fn read(&self) -> StoreReader<'_> {
        StoreReader { guard: self.inner.read().expect("store lock poisoned"), retention: self.retention }
    }

    pub fn select_range(
        &self,
        matcher: &SeriesMatcher,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<BTreeMap<SeriesKey, Vec<(Timestamp, f64)>>, MetricsError> {
        self.read().select_range(matcher, start, end)
    }

    /// Drop every sample older than `now - retention`.
    pub fn prune(&self, now: Timestamp) -> usize {
        let cutoff = now - self.retention.as_millis_i64();
        let mut inner = self.inner.write().expect("store lock poisoned");
        let mut removed = 0;
        inner.series.retain(|_, samples| {
            let keep_from = samples.partition_point(|(ts, _)| *ts < cutoff);
            removed += keep_from;
            samples.drain(..keep_from);
            !samples.is_empty()
        });
        removed
    }

    /// Every stored sample, ordered by series then time.
    pub fn dump(&self) -> Vec<MetricSample> {
        let r = self.read();
        r.guard
            .series
            .iter()
            .flat_map(|(k, v)| v.iter().map(move |(t, x)| MetricSample::new(k.clone(), *t, *x)))
            .collect()
    }
}

impl Inner {
    fn try_insert(&mut self, s: &MetricSample, retention: Duration) -> Result<(), RejectReason> {
        if s.timestamp < 0 {
            return Err(RejectReason::NegativeTimestamp);
        }
        if !super::series::is_valid_metric_name(&s.series.metric_name) {
            return Err(RejectReason::InvalidSeries);
        }
        if let Some(head) = self.head {
            if s.timestamp < head - retention.as_millis_i64() {
                return Err(RejectReason::TooOld);
            }
        }
        let entry = self.series.entry(s.series.clone()).or_default();
        if let Some(&(last, _)) = entry.last() {
            if s.timestamp == last {
                return Err(RejectReason::DuplicateTimestamp);
            }
            if s.timestamp < last {
                return Err(RejectReason::OutOfOrder);
            }
        }
        entry.push((s.timestamp, s.value));
        self.head = Some(self.head.map_or(s.timestamp, |h| h.max(s.timestamp)));
        Ok(())
    }
}

/// Read guard over the store; see [`TimeSeriesStore::read`].
pub struct StoreReader<'a> {
    guard: RwLockReadGuard<'a, Inner>,
    retention: Duration,
}

impl StoreReader<'_> {
    /// Newest timestamp ever ingested.
    pub fn head(&self) -> Option<Timestamp> {
        self.guard.head
    }

    fn floor(&self) -> Timestamp {
        self.guard.head.map_or(Timestamp::MIN, |h| h - self.retention.as_millis_i64())
    }

    pub fn series_count(&self) -> usize {
        self.guard.series.len()
    }

    pub fn sample_count(&self) -> usize {
        self.guard.series.values().map(Vec::len).sum()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.guard.series.keys()
    }

    /// Samples of every matching series with `start <= ts <= end`, ascending.
    /// Series with nothing in range are omitted.
    pub fn select_range(
        &self,
        matcher: &SeriesMatcher,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<BTreeMap<SeriesKey, Vec<(Timestamp, f64)>>, MetricsError> {
        if start > end {
            return Err(MetricsError::InvalidRange { start, end });
        }
        let start = start.max(self.floor());
        let mut out = BTreeMap::new();
        for (key, samples) in self.matching(matcher) {
            let lo = samples.partition_point(|(t, _)| *t < start);
            let hi = samples.partition_point(|(t, _)| *t <= end);
            if lo < hi {
                out.insert(key.clone(), samples[lo..hi].to_vec());
            }
        }
        Ok(out)
    }

    /// Borrowing variant of [`select_range`](Self::select_range) used by the evaluator.
    pub fn for_each_in_range<F>(&self, matcher: &SeriesMatcher, start: Timestamp, end: Timestamp, mut f: F)
    where
        F: FnMut(&SeriesKey, &[(Timestamp, f64)]),
    {
        if start > end {
            return;
        }
        let start = start.max(self.floor());
        for (key, samples) in self.matching(matcher) {
            let lo = samples.partition_point(|(t, _)| *t < start);
            let hi = samples.partition_point(|(t, _)| *t <= end);
            if lo < hi {
                f(key, &samples[lo..hi]);
            }
        }
    }

    fn matching<'s>(&'s self, matcher: &'s SeriesMatcher) -> Box<dyn Iterator<Item = (&'s SeriesKey, &'s Vec<(Timestamp, f64)>)> + 's> {
        match &matcher.metric_name {
            // keys sort by metric name first, so a name narrows to a contiguous run
            Some(name) => {
                let lo = SeriesKey::unnamed(BTreeMap::new());
                let lo = SeriesKey { metric_name: name.clone(), ..lo };
                Box::new(
                    self.guard
                        .series
                        .range(lo..)
                        .take_while(move |(k, _)| &k.metric_name == name)
                        .filter(move |(k, _)| matcher.matches(k)),
                )
            }
            None => Box::new(self.guard.series.iter().filter(move |(k, _)| matcher.matches(k))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::series::{LabelMatcher, MatchOp};
    use proptest::prelude::*;

    fn key(code: &str) -> SeriesKey {
        SeriesKey::new("req_total", [("code", code)]).unwrap()
    }

    #[test]
    fn accepts_increasing_rejects_duplicates() {
        let store = TimeSeriesStore::default();
        let batch = vec![MetricSample::new(key("200"), 1000, 1.0), MetricSample::new(key("200"), 2000, 2.0)];
        assert_eq!(store.ingest(batch.clone()).accepted, 2);
        let again = store.ingest(batch);
        assert_eq!(again.accepted, 0);
        assert_eq!(again.rejected.len(), 2);
        assert!(again.rejected.iter().all(|(_, r)| matches!(r, RejectReason::DuplicateTimestamp | RejectReason::OutOfOrder)));
        assert_eq!(again.rejected[1].1, RejectReason::DuplicateTimestamp);
    }

    #[test]
    fn count_reconciliation() {
        let store = TimeSeriesStore::default();
        let mut samples = Vec::new();
        for s in 0..100 {
            for t in 0..100 {
                samples.push(MetricSample::new(SeriesKey::new("m", [("s", s.to_string())]).unwrap(), t * 1000, t as f64));
            }
        }
        let report = store.ingest(samples);
        let r = store.read();
        assert_eq!(report.accepted, 10_000);
        let all = r.select_range(&SeriesMatcher::name("m"), 0, i64::MAX).unwrap();
        assert_eq!(all.len(), 100);
        assert_eq!(all.values().map(Vec::len).sum::<usize>(), report.accepted);
        assert_eq!(r.sample_count(), 10_000);
    }

    #[test]
    fn point_query_and_invalid_range() {
        let store = TimeSeriesStore::default();
        store.ingest((0..5).map(|i| MetricSample::new(key("200"), i * 10, i as f64)));
        let got = store.select_range(&SeriesMatcher::name("req_total"), 20, 20).unwrap();
        assert_eq!(got[&key("200")], vec![(20, 2.0)]);
        assert!(matches!(store.select_range(&SeriesMatcher::name("req_total"), 5, 4), Err(MetricsError::InvalidRange { .. })));
    }

    #[test]
    fn regex_matcher_matches_linear_scan() {
        let store = TimeSeriesStore::default();
        for code in ["200", "201", "404", "2000", "x200"] {
            store.ingest([MetricSample::new(key(code), 0, 1.0)]);
        }
        store.ingest([MetricSample::new(SeriesKey::new("other", [("code", "200")]).unwrap(), 0, 1.0)]);
        let m = SeriesMatcher::name("req_total").with(LabelMatcher::new("code", MatchOp::Regex, "2..").unwrap());
        let got: Vec<_> = store.select_range(&m, 0, 10).unwrap().into_keys().collect();
        // oracle: linear scan over every stored key
        let oracle: Vec<_> = store
            .dump()
            .into_iter()
            .map(|s| s.series)
            .filter(|k| k.metric_name == "req_total" && {
                let c = k.label("code").unwrap();
                c.len() == 3 && c.starts_with('2')
            })
            .collect();
        assert_eq!(got, oracle);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn retention_prunes_and_filters() {
        let store = TimeSeriesStore::new(Duration::from_secs(10));
        store.ingest((0..30).map(|i| MetricSample::new(key("200"), i * 1000, i as f64)));
        let got = store.select_range(&SeriesMatcher::name("req_total"), 0, 100_000).unwrap();
        assert_eq!(got[&key("200")].first().unwrap().0, 19_000);
        store.prune(29_000);
        assert_eq!(store.read().sample_count(), 11);
        let report = store.ingest([MetricSample::new(key("201"), 1000, 1.0)]);
        assert_eq!(report.rejected[0].1, RejectReason::TooOld);
    }

    #[test]
    fn snapshot_persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.snap");
        {
            let store = TimeSeriesStore::with_snapshot(Duration::from_days(1), &path).unwrap();
            store.ingest([MetricSample::new(key("200"), 5, 1.5), MetricSample::new(key("500"), 6, 2.5)]);
        }
        let reopened = TimeSeriesStore::with_snapshot(Duration::from_days(1), &path).unwrap();
        assert_eq!(reopened.read().sample_count(), 2);
        reopened.ingest([MetricSample::new(key("200"), 7, 3.0)]);
        drop(reopened);
        let again = TimeSeriesStore::with_snapshot(Duration::from_days(1), &path).unwrap();
        assert_eq!(again.dump().len(), 3);
    }

    proptest! {
        #[test]
        fn ingest_then_select_round_trips(values in proptest::collection::vec((0u8..4, 0i64..500, -1e6f64..1e6), 0..200)) {
            let store = TimeSeriesStore::default();
            let samples: Vec<_> = values
                .iter()
                .map(|(s, t, v)| MetricSample::new(SeriesKey::new("p", [("s", s.to_string())]).unwrap(), *t, *v))
                .collect();
            let report = store.ingest(samples.clone());

            // oracle: a sample is accepted iff its timestamp exceeds every earlier one of its series
            let mut last: BTreeMap<SeriesKey, i64> = BTreeMap::new();
            let mut expected: BTreeMap<SeriesKey, Vec<(i64, f64)>> = BTreeMap::new();
            let mut expected_rejects = 0;
            for s in &samples {
                match last.get(&s.series) {
                    Some(&l) if s.timestamp <= l => expected_rejects += 1,
                    _ => {
                        last.insert(s.series.clone(), s.timestamp);
                        expected.entry(s.series.clone()).or_default().push((s.timestamp, s.value));
                    }
                }
            }
            prop_assert_eq!(report.rejected.len(), expected_rejects);
            let got = store.select_range(&SeriesMatcher::name("p"), 0, i64::MAX).unwrap();
            prop_assert_eq!(got, expected);
        }
    }
}
