//! Expertise tracking, noisy result perception, and reputation.
//!
//! Nodes cannot measure plan quality exactly. The perceived result of an
//! execution is a normal sample centered on the true normalized error, with a
//! spread that shrinks as the operator's expertise grows. Reputation converts
//! an expertise record into a single score: unproven operators get the
//! benefit of the doubt, while accumulated experience makes a weak track
//! record count against them.

use crate::rng::{draw_normal, SimRng};
use thiserror::Error;

/// An operator's expertise for one node type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertiseRecord {
    /// Quality of the latest execution, in `[0, 1]`.
    pub local: f64,
    /// Number of executions performed, capped at the global threshold.
    pub global: u32,
}

impl ExpertiseRecord {
    /// Record held before any execution: full confidence, one unit of
    /// presumed experience so the noise formula is defined.
    pub fn initial() -> Self {
        Self { local: 1.0, global: 1 }
    }
}

/// Parameters shared by every reputation computation in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReputationParams {
    /// Cap for the global expertise counter. At the cap, local quality fully
    /// determines reputation.
    pub global_threshold: u32,
    /// Scale from perceived result to the delay before the node asks for its
    /// next plan.
    pub max_time: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReputationError {
    #[error("global expertise must be at least 1 to derive a noise level")]
    ZeroGlobal,
}

/// Spread of the perception noise for an execution with true normalized error
/// `error_norm`, performed under the given expertise record. Low local
/// expertise and low global experience both widen it; at full expertise the
/// spread collapses to the error scale divided by the experience counter.
pub fn noise_stddev(
    expertise: &ExpertiseRecord,
    error_norm: f64,
) -> Result<f64, ReputationError> {
    if expertise.global == 0 {
        return Err(ReputationError::ZeroGlobal);
    }
    Ok((1.0 - expertise.local + 1.0 / expertise.global as f64) * error_norm)
}

/// The node's noisy reading of an execution: a normal sample around the true
/// normalized error, clamped to `[0, 1]`. Consumes exactly two 64-bit words.
/// With `stddev` 0 the reading equals `error_norm` exactly.
pub fn perceive_result(error_norm: f64, stddev: f64, rng: &mut SimRng) -> f64 {
    draw_normal(rng, error_norm, stddev).clamp(0.0, 1.0)
}

/// Delay until the node will request its next plan.
pub fn next_plan_time(perceived_result: f64, params: &ReputationParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&perceived_result));
    perceived_result * params.max_time
}

/// Expertise after one more execution whose perception noise was `stddev`:
/// local quality is rebuilt from that noise level, the experience counter
/// advances toward the cap.
pub fn update_expertise(
    old: &ExpertiseRecord,
    stddev: f64,
    params: &ReputationParams,
) -> ExpertiseRecord {
    ExpertiseRecord {
        local: (1.0 - stddev).clamp(0.0, 1.0),
        global: (old.global + 1).min(params.global_threshold),
    }
}

/// Reputation score in `[0, 1]`. An empty track record scores 1; experience
/// scales how hard imperfect local quality is punished.
pub fn reputation(expertise: &ExpertiseRecord, params: &ReputationParams) -> f64 {
    let frac = expertise.global as f64 / params.global_threshold as f64;
    1.0 - (1.0 - expertise.local) * frac
}
