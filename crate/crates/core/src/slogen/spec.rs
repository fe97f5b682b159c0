use std::fmt;

use serde::{Deserialize, Serialize};

use super::SlogenError;
use crate::promql;
use crate::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliKind {
    Availability,
    Latency,
}

impl fmt::Display for SliKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliKind::Availability => "availability",
            SliKind::Latency => "latency",
        })
    }
}

/// A ratio indicator: `good_query / total_query`.
///
/// Latency indicators also carry the histogram they read and the bucket
/// bound that counts as good.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliSpec {
    pub service: String,
    pub name: String,
    pub kind: SliKind,
    pub good_query: String,
    pub total_query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_metric: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloSpec {
    pub sli: SliSpec,
    pub target: f64,
    pub window: Duration,
    pub description: String,
}

pub const DEFAULT_WINDOWS: [Duration; 3] = [Duration::from_days(7), Duration::from_days(28), Duration::from_days(30)];

impl SloSpec {
    /// `service/name`, used to refer to the objective from statuses and alerts.
    pub fn id(&self) -> String {
        format!("{}/{}", self.sli.service, self.sli.name)
    }

    /// Every problem with the objective; empty means valid.
    pub fn problems(&self, windows: &[Duration]) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.target > 0.0 && self.target < 1.0) {
            out.push(format!("target {} must lie strictly between 0 and 1", self.target));
        }
        if !windows.contains(&self.window) {
            let allowed: Vec<String> = windows.iter().map(|w| w.to_string()).collect();
            out.push(format!("window {} is not one of {}", self.window, allowed.join(", ")));
        }
        if self.sli.service.is_empty() {
            out.push("sli.service is empty".into());
        }
        if self.sli.name.is_empty() {
            out.push("sli.name is empty".into());
        }
        for (field, q) in [("good_query", &self.sli.good_query), ("total_query", &self.sli.total_query)] {
            match promql::validate(q) {
                Ok(_) => {}
                Err(diags) => {
                    for d in diags {
                        out.push(format!("{field} {q:?}: {} at {}..{}", d.message, d.span.0, d.span.1));
                    }
                }
            }
        }
        if self.sli.kind == SliKind::Latency && self.sli.threshold_seconds.map(|t| !(t > 0.0)).unwrap_or(true) {
            out.push("latency SLI needs a positive threshold_seconds".into());
        }
        out
    }

    pub fn validate(&self, windows: &[Duration]) -> Result<(), SlogenError> {
        let p = self.problems(windows);
        if p.is_empty() {
            Ok(())
        } else {
            Err(SlogenError::Invalid(p))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub slo: String,
    pub budget_fraction: f64,
    pub consumed_fraction: f64,
    pub remaining_fraction: f64,
}

impl ErrorBudget {
    /// Budget with an observed bad fraction applied.
    pub fn with_observed(slo: &SloSpec, bad_fraction: f64) -> Self {
        let budget = 1.0 - slo.target;
        ErrorBudget {
            slo: slo.id(),
            budget_fraction: budget,
            consumed_fraction: bad_fraction / budget,
            remaining_fraction: (budget - bad_fraction).max(0.0),
        }
    }
}

/// Unevaluated budget: nothing consumed yet.
pub fn derive_error_budget(slo: &SloSpec) -> ErrorBudget {
    ErrorBudget::with_observed(slo, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Page,
    Ticket,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Page => "page",
            Severity::Ticket => "ticket",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub name: String,
    pub slo: String,
    pub expr: String,
    pub for_duration: Duration,
    pub severity: Severity,
    pub burn_rate_threshold: f64,
    pub threshold_on_bad_fraction: f64,
    pub windows: (Duration, Duration),
}

/// `(severity, burn, long window, short window, for)`.
pub const BURN_RATE_TABLE: [(Severity, f64, Duration, Duration, Duration); 3] = [
    (Severity::Page, 14.4, Duration::from_hours(1), Duration::from_mins(5), Duration::from_mins(2)),
    (Severity::Page, 6.0, Duration::from_hours(6), Duration::from_mins(30), Duration::from_mins(15)),
    (Severity::Ticket, 1.0, Duration::from_days(3), Duration::from_hours(6), Duration::from_hours(1)),
];

/// Bad fraction of the SLI over `window`, as a query.
pub fn bad_fraction_query(sli: &SliSpec, window: Duration) -> Result<String, SlogenError> {
    let good = rewindow(&sli.good_query, window)?;
    let total = rewindow(&sli.total_query, window)?;
    Ok(format!("(1 - ({good} / {total}))"))
}

fn rewindow(q: &str, window: Duration) -> Result<String, SlogenError> {
    let e = promql::parse(q).map_err(|d| SlogenError::Invalid(vec![format!("{q:?}: {}", d[0].message)]))?;
    Ok(e.with_range_window(window).to_string())
}

/// The multi-window multi-burn-rate rule set.
pub fn derive_alert_rules(slo: &SloSpec) -> Result<Vec<AlertRule>, SlogenError> {
    let budget = 1.0 - slo.target;
    let mut out = Vec::with_capacity(BURN_RATE_TABLE.len());
    for (severity, burn, long, short, for_duration) in BURN_RATE_TABLE {
        let side = |w| -> Result<String, SlogenError> { Ok(format!("{} / {budget} > {burn}", bad_fraction_query(&slo.sli, w)?)) };
        let expr = format!("{} and {}", side(long)?, side(short)?);
        if let Err(d) = promql::validate(&expr) {
            return Err(SlogenError::GenerationFailed(format!("alert expression does not validate: {}", d[0].message)));
        }
        out.push(AlertRule {
            name: format!("{}-{}-burn-{}-{}", slo.sli.service, slo.sli.name, burn, long),
            slo: slo.id(),
            expr,
            for_duration,
            severity,
            burn_rate_threshold: burn,
            threshold_on_bad_fraction: burn * budget,
            windows: (long, short),
        });
    }
    Ok(out)
}
