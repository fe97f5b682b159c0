//! Metrics-driven reliability engineering toolkit.
//!
//! The crate covers the whole loop from raw service metrics to monitored
//! service level objectives:
//!
//! * [`metrics`] stores samples and ingests the text exposition format.
//! * [`promql`] parses and evaluates the query subset every generated rule uses.
//! * [`ledger`] is a hash-chained, multi-peer, append-only record of every
//!   platform action with five contract handlers.
//! * [`fedlearn`] trains a violation predictor across peers without a
//!   coordinator and ranks candidate SLI metrics.
//! * [`slogen`] turns ranked metrics into SLOs, error budgets and burn-rate alerts.
//! * [`nft`] encodes SLI/SLO records as `s-528` tokens and audits them.
//! * [`monitor`] evaluates budgets, drives alert state and predicts exhaustion.
//! * [`harness`] wires everything into simulated end-to-end scenarios.
//!
//! The guide under `book/` explains the semantics chapter by chapter; its code
//! snippets are compiled as doc-tests of this crate.

pub mod canonical;
pub mod crypto;
pub mod duration;
pub mod fedlearn;
pub mod harness;
pub mod ledger;
pub mod metrics;
pub mod monitor;
pub mod nft;
pub mod promql;
pub mod slogen;

pub use duration::Duration;

/// Chapters of the guide under `book/`, compiled so their examples run as doc-tests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/queries.md")]
    pub mod queries {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    pub mod ledger {}
    #[doc = include_str!("../../../book/src/federated.md")]
    pub mod federated {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    pub mod objectives {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    pub mod tokens {}
    #[doc = include_str!("../../../book/src/monitoring.md")]
    pub mod monitoring {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub mod scenarios {}
}
