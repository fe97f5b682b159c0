//! A PromQL-compatible query subset: parser, static checks and evaluator.
//!
//! Supported: number literals, instant and range selectors with `=`, `!=`,
//! `=~`, `!~` matchers, `rate`, `increase`, `histogram_quantile`,
//! `clamp_min`, `clamp_max`, the `sum avg min max count` aggregations with
//! `by`/`without`, arithmetic and comparison operators (with `bool`), unary
//! minus and `and`.
//!
//! `rate` deliberately does not extrapolate to the window edges: it is the
//! sum of non-negative sample-to-sample increases inside the closed window
//! divided by the window length.

mod ast;
mod eval;
mod parser;

pub use ast::{AggregateOp, BinaryOp, Expr, Function, Grouping, GroupingKind, ValueType};
pub use eval::{bucket_quantile, counter_rate, eval_instant, eval_range, EvalError, EvalOptions, Evaluator, QueryValue, Sample};
pub use parser::{Diagnostic, Severity};


/// Parse a query. On failure the error list holds exactly the first problem found.
pub fn parse(query: &str) -> Result<Expr, Vec<Diagnostic>> {
    parser::parse_full(query).map(|p| p.expr)
}

/// Parse plus static checks, without touching any store.
///
/// `Ok` carries warnings (for example `rate` over a metric whose kind cannot
/// be known statically); `Err` carries every error.
pub fn validate(query: &str) -> Result<Vec<Diagnostic>, Vec<Diagnostic>> {
    let parsed = parser::parse_full(query)?;
    let (errors, warnings): (Vec<_>, Vec<_>) = parsed.lints.into_iter().partition(|d| d.severity == Severity::Error);
    if errors.is_empty() {
        Ok(warnings)
    } else {
        Err(errors)
    }
}

/// Static result type of a query.
pub fn type_of(query: &str) -> Result<ValueType, Vec<Diagnostic>> {
    parser::parse_full(query).map(|p| p.ty)
}

#[cfg(test)]
mod tests;
