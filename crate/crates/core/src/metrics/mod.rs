//! Embedded time-series storage and text-exposition ingestion.

mod exposition;
mod scrape;
mod series;
pub mod snapshot;
mod store;

pub use exposition::{
    format_value, parse_exposition, parse_series_key, write_exposition, EncodingError, Exposition, FamilySamples,
    MetricFamily, MetricKind, ParseDiagnostic,
};
pub use scrape::{scrape_once, ScrapeError, ScrapeTarget, UP_METRIC};
pub use series::{
    is_valid_label_name, is_valid_metric_name, LabelMatcher, MatchOp, MetricSample, SeriesKey, SeriesMatcher,
    Timestamp,
};
pub use store::{IngestReport, RejectReason, StoreReader, TimeSeriesStore};

/// Default staleness lookback for instant selectors.
pub const DEFAULT_LOOKBACK: crate::duration::Duration = crate::duration::Duration::from_mins(5);

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid metric name {0:?}")]
    InvalidMetricName(String),
    #[error("invalid label name {0:?}")]
    InvalidLabelName(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("invalid regex {0:?}: {1}")]
    InvalidRegex(String, String),
    #[error("invalid range: start {start} > end {end}")]
    InvalidRange { start: Timestamp, end: Timestamp },
    #[error("invalid scrape target: {0}")]
    InvalidTarget(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
