use serde::{Deserialize, Serialize};

use super::MonitorError;
use crate::metrics::{StoreReader, Timestamp};
use crate::promql::{self, EvalOptions, Evaluator, QueryValue};
use crate::slogen::SloSpec;
use crate::Duration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub slo: String,
    pub evaluated_at: Timestamp,
    pub window: Duration,
    pub bad_fraction: f64,
    pub burn_rate: f64,
    pub budget_fraction: f64,
    pub consumed_fraction: f64,
    pub remaining_fraction: f64,
    pub healthy: bool,
    pub no_traffic: bool,
    /// Burn over the short lookback used for exhaustion forecasts.
    #[serde(default)]
    pub current_burn_rate: Option<f64>,
}

fn sum_of(v: QueryValue) -> Option<f64> {
    match v {
        QueryValue::Scalar(x) => Some(x),
        QueryValue::Vector(v) if !v.is_empty() => Some(v.iter().map(|(_, x)| x).sum()),
        _ => None,
    }
}

fn eval_sum(ev: &Evaluator, slo: &SloSpec, q: &str, now: Timestamp, window: Option<Duration>) -> Result<Option<f64>, MonitorError> {
    let ctx = |message: String| MonitorError::Eval { slo: slo.id(), query: q.to_string(), message };
    let mut e = promql::parse(q).map_err(|d| ctx(d[0].message.clone()))?;
    if let Some(w) = window {
        e = e.with_range_window(w);
    }
    Ok(sum_of(ev.instant(&e, now).map_err(|err| ctx(err.to_string()))?))
}

/// Bad fraction `1 - good/total` over `window` (the SLO window when `None`); `None` means no traffic.
fn bad_fraction(ev: &Evaluator, slo: &SloSpec, now: Timestamp, window: Option<Duration>) -> Result<Option<f64>, MonitorError> {
    let total = eval_sum(ev, slo, &slo.sli.total_query, now, window)?.unwrap_or(0.0);
    if !(total > 0.0) {
        return Ok(None);
    }
    let good = eval_sum(ev, slo, &slo.sli.good_query, now, window)?.unwrap_or(0.0);
    Ok(Some((1.0 - good / total).clamp(0.0, 1.0)))
}

/// Budget status at `now`, plus the burn over `short_window` when given.
pub fn evaluate(slo: &SloSpec, reader: &StoreReader, now: Timestamp, short_window: Option<Duration>) -> Result<BudgetStatus, MonitorError> {
    let ev = Evaluator::new(reader, EvalOptions::default());
    let budget = 1.0 - slo.target;
    let raw = bad_fraction(&ev, slo, now, None)?;
    let no_traffic = raw.is_none();
    let burn_rate = raw.unwrap_or(0.0) / budget;
    // Derive the bad fraction back from the burn so the two agree exactly.
    let bad = burn_rate * budget;
    let remaining = (budget - bad).max(0.0);
    let current_burn_rate = match short_window {
        Some(w) => Some(bad_fraction(&ev, slo, now, Some(w))?.unwrap_or(0.0) / budget),
        None => None,
    };
    Ok(BudgetStatus {
        slo: slo.id(),
        evaluated_at: now,
        window: slo.window,
        bad_fraction: bad,
        burn_rate,
        budget_fraction: budget,
        consumed_fraction: bad / budget,
        remaining_fraction: remaining,
        healthy: remaining > 0.0,
        no_traffic,
        current_burn_rate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Lead time an operator wants; exhaustion inside it is flagged.
    pub horizon: Duration,
    /// Statuses older than this are refused.
    pub max_age: Duration,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { horizon: Duration::from_hours(6), max_age: Duration::from_mins(5) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub slo: String,
    pub evaluated_at: Timestamp,
    /// Seconds until the budget runs out; `None` means never at the current burn.
    pub time_to_exhaustion_secs: Option<f64>,
    pub fl_probability: Option<f64>,
    pub horizon: Duration,
    pub exhausts_within_horizon: bool,
}

/// Analytic forecast: remaining budget divided by the speed it is being spent.
///
/// At burn `b` the budget drains at `b` budgets per window, so the time left
/// is `(remaining / budget) × window / b`. The short-window burn is used when
/// the status has one, otherwise the whole-window burn.
pub fn predict_exhaustion(status: &BudgetStatus, now: Timestamp, opts: PredictOptions) -> Result<PredictionReport, MonitorError> {
    let age = now - status.evaluated_at;
    if age < 0 || age as u64 > opts.max_age.as_millis() {
        return Err(MonitorError::StaleStatus { slo: status.slo.clone(), age_ms: age });
    }
    let burn = status.current_burn_rate.unwrap_or(status.burn_rate);
    let tte = if burn <= 0.0 {
        None
    } else {
        Some(status.remaining_fraction / status.budget_fraction * status.window.as_secs_f64() / burn)
    };
    Ok(PredictionReport {
        slo: status.slo.clone(),
        evaluated_at: status.evaluated_at,
        time_to_exhaustion_secs: tte,
        fl_probability: None,
        horizon: opts.horizon,
        exhausts_within_horizon: tte.map(|s| s <= opts.horizon.as_secs_f64()).unwrap_or(false),
    })
}
