//! Evaluation and causal-probing toolkit for trajectory-planning driving
//! agents.
//!
//! - [`scenario`]: scene records and the JSON Lines corpus format
//! - [`openloop`] / [`closedloop`]: trajectory metrics and composite scores
//! - [`probe`]: lateral-offset and history-inversion probes with a verdict
//! - [`attention`]: attention-flow proportions from exported tensors
//! - [`grpo`] / [`sampling`]: group-relative policy terms and stratified
//!   sampling
//! - [`agents`]: mock planners and the external planner protocol

pub mod agents;
pub mod attention;
pub mod closedloop;
pub mod geometry;
pub mod grpo;
pub mod openloop;
pub mod probe;
pub mod sampling;
pub mod scenario;
pub mod synthetic;
pub mod trajectory;

/// Canonical simulation and sampling period, seconds.
pub const DEFAULT_TICK_S: f64 = 0.1;
