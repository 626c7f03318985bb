//! Resource-constrained search over "block type at position" assignments.
//!
//! A skeleton exposes `N` positions; a catalog offers `L` block types. A
//! solution assigns at most one type per position and must fit two budgets at
//! once: parameter count and multiply-adds. Quality is a pluggable set
//! function (synthetic oracles or an external evaluator process). The search
//! engines are an eager cost-effective greedy, a lazy priority-queue variant,
//! and a three-mode wrapper that keeps the best of uniform-, parameter- and
//! madds-ratio runs.

pub mod config;
pub mod costmodel;
pub mod domain;
pub mod instance;
pub mod objective;
pub mod oracle;
pub mod search;
