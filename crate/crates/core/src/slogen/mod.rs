//! SLI/SLO generation, error budgets and burn-rate alert rules.
//!
//! ```
//! use slokit::slogen::{derive_alert_rules, template_slo, GenerationContext, Objective};
//! use slokit::Duration;
//!
//! let ctx = GenerationContext::new(
//!     "vault",
//!     "vault_requests_total{path=\"/v1/secret\"}",
//!     Objective::availability(0.99, Duration::from_days(30)),
//! );
//! let slo = template_slo(&ctx).unwrap();
//! assert_eq!(
//!     slo.sli.good_query,
//!     "sum(rate(vault_requests_total{path=\"/v1/secret\",code!~\"5..\"}[30d]))"
//! );
//! let rules = derive_alert_rules(&slo).unwrap();
//! assert_eq!(rules.len(), 3);
//! ```

mod backend;
mod export;
mod prompt;
mod spec;


pub use backend::{
    extract_fenced, generate_slo, parse_answer, repair_prompt, template_slo, GenerationContext, Generated, GeneratorBackend,
    LlmConfig, DEFAULT_MAX_REPAIRS,
};
pub use export::{export_lines, rules_file};
pub use prompt::{build_prompt, seconds_phrase, Objective, Prompt, RankedMetric, TEMPLATE_ID, TEMPLATE_V1};
pub use spec::{
    bad_fraction_query, derive_alert_rules, derive_error_budget, AlertRule, ErrorBudget, Severity, SliKind, SliSpec,
    SloSpec, BURN_RATE_TABLE, DEFAULT_WINDOWS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SlogenError {
    #[error("invalid objective: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
}
