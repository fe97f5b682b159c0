use serde::{Deserialize, Serialize};

use super::prompt::{Objective, Prompt};
use super::spec::{SliKind, SliSpec, SloSpec, DEFAULT_WINDOWS};
use super::SlogenError;
use crate::metrics::{LabelMatcher, MatchOp, SeriesMatcher};
use crate::promql::{self, Expr};
use crate::Duration;

pub const DEFAULT_MAX_REPAIRS: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_repairs")]
    pub max_repair_attempts: u32,
    #[serde(default = "default_timeout")]
    pub timeout: Duration,
}

fn default_repairs() -> u32 {
    DEFAULT_MAX_REPAIRS
}

fn default_timeout() -> Duration {
    Duration::from_secs(30)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeneratorBackend {
    Template,
    Llm(LlmConfig),
}

/// What the generator needs besides the prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub service: String,
    /// Selector for the request counter (availability) or the latency
    /// histogram, with or without its `_bucket` suffix (latency).
    pub selector: String,
    pub objective: Objective,
    #[serde(default = "default_code_label")]
    pub code_label: String,
    #[serde(default = "default_windows")]
    pub windows: Vec<Duration>,
}

fn default_code_label() -> String {
    "code".to_string()
}

fn default_windows() -> Vec<Duration> {
    DEFAULT_WINDOWS.to_vec()
}

impl GenerationContext {
    pub fn new(service: &str, selector: &str, objective: Objective) -> Self {
        GenerationContext {
            service: service.to_string(),
            selector: selector.to_string(),
            objective,
            code_label: default_code_label(),
            windows: default_windows(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub slo: SloSpec,
    /// `template` or `llm`.
    pub backend: String,
    pub repairs: u32,
    pub fallback: bool,
    pub warnings: Vec<String>,
}

fn parse_selector(s: &str) -> Result<SeriesMatcher, SlogenError> {
    match promql::parse(s) {
        Ok(Expr::Vector(sel)) if sel.metric_name.is_some() => Ok(sel),
        _ => Err(SlogenError::GenerationFailed(format!("{s:?} is not a metric selector"))),
    }
}

fn strip_histogram_suffix(name: &str) -> &str {
    ["_bucket", "_count", "_sum"].iter().find_map(|suf| name.strip_suffix(suf)).unwrap_or(name)
}

/// Deterministic expansion of the objective into queries.
pub fn template_slo(ctx: &GenerationContext) -> Result<SloSpec, SlogenError> {
    let sel = parse_selector(&ctx.selector)?;
    let o = &ctx.objective;
    let w = o.window;
    let err = |e: crate::metrics::MetricsError| SlogenError::GenerationFailed(e.to_string());
    let sli = match o.kind {
        SliKind::Availability => {
            let good = sel.clone().with(LabelMatcher::new(&ctx.code_label, MatchOp::NotRegex, "5..").map_err(err)?);
            SliSpec {
                service: ctx.service.clone(),
                name: "availability".into(),
                kind: SliKind::Availability,
                good_query: format!("sum(rate({good}[{w}]))"),
                total_query: format!("sum(rate({sel}[{w}]))"),
                threshold_seconds: None,
                histogram_metric: None,
            }
        }
        SliKind::Latency => {
            let thr = o.threshold_seconds.ok_or_else(|| SlogenError::GenerationFailed("latency objective without threshold".into()))?;
            let base = strip_histogram_suffix(sel.metric_name.as_deref().expect("checked above")).to_string();
            let with_name = |n: String| SeriesMatcher { metric_name: Some(n), matchers: sel.matchers.clone() };
            let bucket = with_name(format!("{base}_bucket")).with(LabelMatcher::eq("le", &format!("{thr}")));
            let count = with_name(format!("{base}_count"));
            SliSpec {
                service: ctx.service.clone(),
                name: "latency".into(),
                kind: SliKind::Latency,
                good_query: format!("sum(rate({bucket}[{w}]))"),
                total_query: format!("sum(rate({count}[{w}]))"),
                threshold_seconds: Some(thr),
                histogram_metric: Some(base),
            }
        }
    };
    let slo = SloSpec {
        sli,
        target: o.target,
        window: w,
        description: o.description.clone().filter(|d| !d.trim().is_empty()).unwrap_or_else(|| o.default_sentence(&ctx.service)),
    };
    // The template is trusted; if it ever produces an invalid object that is a bug.
    slo.validate(&ctx.windows).map_err(|e| SlogenError::GenerationFailed(e.to_string()))?;
    Ok(slo)
}

/// Body of the first fenced block, ignoring an optional language tag.
pub fn extract_fenced(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let rest = &text[start + 3..];
    let body_start = rest.find('\n')? + 1;
    let body = &rest[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

/// Parse and validate one model answer; `Err` lists everything wrong with it.
pub fn parse_answer(text: &str, ctx: &GenerationContext) -> Result<SloSpec, Vec<String>> {
    let body = extract_fenced(text).ok_or_else(|| vec!["answer has no fenced block".to_string()])?;
    let slo: SloSpec = serde_json::from_str(body).map_err(|e| vec![format!("object does not match the schema: {e}")])?;
    let mut problems = slo.problems(&ctx.windows);
    if slo.sli.service != ctx.service {
        problems.push(format!("sli.service must be {:?}", ctx.service));
    }
    if slo.sli.kind == SliKind::Availability && slo.sli.good_query == slo.sli.total_query {
        problems.push("good_query must filter a subset of total_query".into());
    }
    if problems.is_empty() {
        Ok(slo)
    } else {
        Err(problems)
    }
}

pub fn repair_prompt(original: &str, problems: &[String]) -> String {
    let mut s = original.to_string();
    s.push_str("\n\nYour previous answer was rejected for these reasons:\n");
    for p in problems {
        s.push_str("- ");
        s.push_str(p);
        s.push('\n');
    }
    s.push_str("Reply again with one corrected fenced ```json block.\n");
    s
}

#[derive(Serialize)]
struct LlmRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    stream: bool,
}

#[derive(Deserialize)]
struct LlmResponse {
    response: String,
}

fn complete(cfg: &LlmConfig, prompt: &str) -> Result<String, String> {
    let agent = ureq::AgentBuilder::new().timeout(cfg.timeout.to_std()).build();
    let body = LlmRequest { model: &cfg.model, prompt, stream: false };
    let resp = agent.post(&cfg.endpoint).send_json(&body).map_err(|e| e.to_string())?;
    let parsed: LlmResponse = resp.into_json().map_err(|e| format!("malformed response body: {e}"))?;
    Ok(parsed.response)
}

/// Generate an objective with the chosen backend.
///
/// The LLM path re-prompts with the validation problems up to
/// `max_repair_attempts` times, then falls back to the template.
pub fn generate_slo(backend: &GeneratorBackend, prompt: &Prompt, ctx: &GenerationContext) -> Result<Generated, SlogenError> {
    let cfg = match backend {
        GeneratorBackend::Template => {
            return Ok(Generated { slo: template_slo(ctx)?, backend: "template".into(), repairs: 0, fallback: false, warnings: Vec::new() })
        }
        GeneratorBackend::Llm(cfg) => cfg,
    };
    let mut warnings = Vec::new();
    let mut text = prompt.text.clone();
    let mut repairs = 0;
    for attempt in 0..=cfg.max_repair_attempts {
        match complete(cfg, &text) {
            Err(e) => {
                warnings.push(format!("LLM endpoint {} unreachable: {e}", cfg.endpoint));
                break;
            }
            Ok(answer) => match parse_answer(&answer, ctx) {
                Ok(slo) => return Ok(Generated { slo, backend: "llm".into(), repairs: attempt, fallback: false, warnings }),
                Err(problems) => {
                    log::warn!("LLM answer {attempt} rejected: {}", problems.join("; "));
                    if attempt == cfg.max_repair_attempts {
                        warnings.push(format!("LLM answer still invalid after {attempt} repair attempts: {}", problems.join("; ")));
                    }
                    if attempt < cfg.max_repair_attempts {
                        repairs += 1;
                        text = repair_prompt(&prompt.text, &problems);
                    }
                }
            },
        }
    }
    warnings.push("fell back to the template backend".into());
    Ok(Generated { slo: template_slo(ctx)?, backend: "template".into(), repairs, fallback: true, warnings })
}
