use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spec::SliKind;
use crate::Duration;

pub const TEMPLATE_ID: &str = "slo-gen/v1";

/// Versioned prompt text. `{name}` slots are substituted verbatim.
pub const TEMPLATE_V1: &str = include_str!("prompt_v1.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMetric {
    pub name: String,
    /// `counter`, `gauge` or `histogram`.
    pub kind: String,
    #[serde(default)]
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: SliKind,
    pub target: f64,
    pub window: Duration,
    /// Latency bound for latency objectives.
    #[serde(default)]
    pub threshold_seconds: Option<f64>,
    #[serde(default)]
    pub description: Option<String>,
}

impl Objective {
    pub fn availability(target: f64, window: Duration) -> Self {
        Objective { kind: SliKind::Availability, target, window, threshold_seconds: None, description: None }
    }

    pub fn latency(target: f64, window: Duration, threshold_seconds: f64) -> Self {
        Objective { kind: SliKind::Latency, target, window, threshold_seconds: Some(threshold_seconds), description: None }
    }

    /// The objective in one sentence; used when no description is given.
    pub fn default_sentence(&self, service: &str) -> String {
        let pct = format_percent(self.target);
        match self.kind {
            SliKind::Availability => {
                format!("{pct} of requests to {service} succeed (non-5xx) over a rolling {} window.", self.window)
            }
            SliKind::Latency => format!(
                "{pct} of requests to {service} are served within {} of request latency over a rolling {} window.",
                seconds_phrase(self.threshold_seconds.unwrap_or(1.0)),
                self.window
            ),
        }
    }
}

fn format_percent(target: f64) -> String {
    let p = (target * 100.0 * 1e6).round() / 1e6;
    format!("{p}%")
}

/// `1 second`, `0.5 seconds`.
pub fn seconds_phrase(s: f64) -> String {
    if s == 1.0 {
        "1 second".to_string()
    } else {
        format!("{s} seconds")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: String,
    pub text: String,
    pub slots: BTreeMap<String, String>,
}

pub fn build_prompt(service: &str, metrics: &[RankedMetric], objective: &Objective) -> Prompt {
    assert!(!metrics.is_empty(), "build_prompt needs at least one metric");
    let metric_lines: Vec<String> = metrics.iter().map(|m| format!("- {} ({})", m.name, m.kind)).collect();
    let sentence = match objective.description.as_deref() {
        Some(d) if !d.trim().is_empty() => d.trim().to_string(),
        _ => objective.default_sentence(service),
    };
    let mut slots = BTreeMap::new();
    slots.insert("service".to_string(), service.to_string());
    slots.insert("sli_metrics".to_string(), metric_lines.join("\n"));
    slots.insert("objective_kind".to_string(), objective.kind.to_string());
    slots.insert("target".to_string(), format!("{}", objective.target));
    slots.insert("window".to_string(), objective.window.to_string());
    slots.insert("objective".to_string(), sentence);
    slots.insert(
        "threshold".to_string(),
        objective.threshold_seconds.map(seconds_phrase).unwrap_or_else(|| "not applicable".to_string()),
    );
    let mut text = TEMPLATE_V1.to_string();
    for (k, v) in &slots {
        text = text.replace(&format!("{{{k}}}"), v);
    }
    Prompt { template_id: TEMPLATE_ID.to_string(), text, slots }
}
