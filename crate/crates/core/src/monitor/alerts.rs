use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MonitorError;
use crate::metrics::{StoreReader, Timestamp};
use crate::promql::{self, EvalOptions, Evaluator, QueryValue};
use crate::slogen::{AlertRule, Severity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertState {
    Pending,
    Firing,
    Resolved,
}

/// One state transition of one rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub rule: String,
    pub slo: String,
    pub severity: Severity,
    pub state: AlertState,
    /// When this transition happened.
    pub fired_at: Timestamp,
    /// When the condition started holding.
    pub active_since: Timestamp,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Active {
    since: Timestamp,
    firing: bool,
}

/// Per-rule pending/firing memory across evaluations.
#[derive(Clone, Debug, Default)]
pub struct AlertTracker {
    active: BTreeMap<String, Active>,
}

impl AlertTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_firing(&self, rule: &str) -> bool {
        self.active.get(rule).map(|a| a.firing).unwrap_or(false)
    }

    pub fn is_pending(&self, rule: &str) -> bool {
        self.active.get(rule).map(|a| !a.firing).unwrap_or(false)
    }
}

fn condition(ev: &Evaluator, rule: &AlertRule, now: Timestamp) -> Result<Option<f64>, MonitorError> {
    let err = |message: String| MonitorError::Eval { slo: rule.slo.clone(), query: rule.expr.clone(), message };
    let e = promql::parse(&rule.expr).map_err(|d| err(d[0].message.clone()))?;
    Ok(match ev.instant(&e, now).map_err(|x| err(x.to_string()))? {
        QueryValue::Vector(v) => v.first().map(|(_, x)| *x),
        QueryValue::Scalar(x) => Some(x),
        QueryValue::Matrix(_) => return Err(err("alert expression yields a range vector".into())),
    })
}

/// Evaluate each rule once. Transitions come out in rule order; errors are per rule.
pub fn check_alerts(
    rules: &[AlertRule],
    reader: &StoreReader,
    now: Timestamp,
    tracker: &mut AlertTracker,
) -> (Vec<Alert>, Vec<MonitorError>) {
    let ev = Evaluator::new(reader, EvalOptions::default());
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for rule in rules {
        let value = match condition(&ev, rule, now) {
            Ok(v) => v,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let mk = |state, since, value| Alert {
            rule: rule.name.clone(),
            slo: rule.slo.clone(),
            severity: rule.severity,
            state,
            fired_at: now,
            active_since: since,
            value,
        };
        match (value, tracker.active.get_mut(&rule.name)) {
            (Some(v), None) => {
                out.push(mk(AlertState::Pending, now, v));
                let firing = rule.for_duration.as_millis() == 0;
                if firing {
                    out.push(mk(AlertState::Firing, now, v));
                }
                tracker.active.insert(rule.name.clone(), Active { since: now, firing });
            }
            (Some(v), Some(a)) => {
                if !a.firing && (now - a.since) as u64 >= rule.for_duration.as_millis() {
                    a.firing = true;
                    out.push(mk(AlertState::Firing, a.since, v));
                }
            }
            (None, Some(a)) => {
                out.push(mk(AlertState::Resolved, a.since, 0.0));
                tracker.active.remove(&rule.name);
            }
            (None, None) => {}
        }
    }
    (out, errors)
}
